//! Progressive hedging for the SAA two-stage box VI.
//!
//! Each iteration solves, for every scenario `j`, the proximally regularized
//! coupled problem in `(x_j, y_j)`
//!
//! ```text
//! 0 ∈ (A + rI) x_j + B_j y_j + h1 + w_j − r x_j^ν      + N_[a,b](x_j)
//! 0 ∈ L_j x_j + (M_j + rI) y_j + h2_j − r y_j^ν        + N_[l_j,u_j](y_j)
//! ```
//!
//! then averages the first-stage copies and updates the multipliers
//! `w_j ← w_j + r (x̂_j − x̄)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxvi::{self, BoxLvi, SolveStatus};
use crate::error::{Error, Result};
use crate::model::{self, mid_unchecked, TwoStageInstance};
use crate::second_stage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhmOptions {
    pub r: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Evaluate the stopping residual every this many iterations.
    pub res_every: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for PhmOptions {
    fn default() -> Self {
        PhmOptions {
            r: 1.0,
            tol: 1e-5,
            max_iter: 5000,
            res_every: 1,
            inner_tol: boxvi::DEFAULT_TOL,
            inner_max_iter: boxvi::DEFAULT_MAX_ITER,
        }
    }
}

impl PhmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::invalid(format!("penalty r must be positive, got {}", self.r)));
        }
        if !(self.tol > 0.0) || !(self.inner_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.max_iter == 0 || self.res_every == 0 {
            return Err(Error::invalid("max_iter and res_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhmState {
    pub nu: usize,
    pub x_bar: DVector<f64>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub r: f64,
}

impl PhmState {
    /// Weighted mean of the multipliers; zero in exact arithmetic.
    pub fn multiplier_mean(&self, inst: &TwoStageInstance) -> DVector<f64> {
        let mut acc = DVector::zeros(inst.n());
        for (sc, w) in inst.scenarios.iter().zip(&self.w) {
            acc.axpy(sc.weight, w, 1.0);
        }
        acc
    }
}

/// `x_j = x0`, `w_j = 0`, `y_j = mid(0, l_j, u_j)`.
pub fn init(inst: &TwoStageInstance, r: f64, x0: &DVector<f64>) -> Result<PhmState> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("penalty r must be positive, got {r}")));
    }
    if x0.len() != inst.n() {
        return Err(Error::invalid(format!("x0 has length {}, expected {}", x0.len(), inst.n())));
    }
    let n = inst.n();
    let count = inst.n_scenarios();
    let y = inst
        .scenarios
        .iter()
        .map(|sc| mid_unchecked(&DVector::zeros(sc.dim()), &sc.lower, &sc.upper))
        .collect();
    Ok(PhmState {
        nu: 0,
        x_bar: x0.clone(),
        x: vec![x0.clone(); count],
        y,
        w: vec![DVector::zeros(n); count],
        r,
    })
}

/// Default starting point `mid(0, a, b)`.
pub fn default_start(inst: &TwoStageInstance) -> DVector<f64> {
    mid_unchecked(&DVector::zeros(inst.n()), &inst.lower, &inst.upper)
}

/// The regularized coupled LVI of scenario `j` at the current state.
pub fn scenario_lvi(inst: &TwoStageInstance, state: &PhmState, j: usize) -> BoxLvi {
    let sc = &inst.scenarios[j];
    let (n, m) = (inst.n(), sc.dim());
    let r = state.r;
    let mut h = sc.block_operator(&inst.a);
    for i in 0..n + m {
        h[(i, i)] += r;
    }
    let mut q = DVector::zeros(n + m);
    q.rows_mut(0, n)
        .copy_from(&(&inst.h1 + &state.w[j] - &state.x[j] * r));
    q.rows_mut(n, m).copy_from(&(&sc.h2 - &state.y[j] * r));
    let mut lower = DVector::zeros(n + m);
    let mut upper = DVector::zeros(n + m);
    lower.rows_mut(0, n).copy_from(&inst.lower);
    upper.rows_mut(0, n).copy_from(&inst.upper);
    lower.rows_mut(n, m).copy_from(&sc.lower);
    upper.rows_mut(n, m).copy_from(&sc.upper);
    BoxLvi { h, q, lower, upper }
}

/// One PHM iteration. Scenario solves run in parallel; the averaging runs in
/// scenario order so the result does not depend on scheduling.
pub fn step(inst: &TwoStageInstance, state: &PhmState, opts: &PhmOptions) -> Result<PhmState> {
    let n = inst.n();
    let solved = (0..inst.n_scenarios())
        .into_par_iter()
        .map(|j| {
            let p = scenario_lvi(inst, state, j);
            let mut z0 = DVector::zeros(p.dim());
            z0.rows_mut(0, n).copy_from(&state.x[j]);
            z0.rows_mut(n, p.dim() - n).copy_from(&state.y[j]);
            let sol = boxvi::solve(&p, Some(&z0), opts.inner_tol, opts.inner_max_iter);
            if sol.converged() {
                Ok(sol.z)
            } else {
                Err(Error::InnerSolve {
                    scenario: j,
                    status: sol.status,
                    residual: sol.residual,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut x_bar = DVector::zeros(n);
    for (sc, z) in inst.scenarios.iter().zip(&solved) {
        x_bar.axpy(sc.weight, &z.rows(0, n), 1.0);
    }
    let r = state.r;
    let w = state
        .w
        .iter()
        .zip(&solved)
        .map(|(w, z)| w + (z.rows(0, n) - &x_bar) * r)
        .collect();
    let y = solved.iter().map(|z| z.rows(n, z.len() - n).into_owned()).collect();
    Ok(PhmState {
        nu: state.nu + 1,
        x: vec![x_bar.clone(); inst.n_scenarios()],
        x_bar,
        y,
        w,
        r,
    })
}

/// Solves every second stage at `x` and evaluates the first-stage natural-map residual.
pub fn residual_at(inst: &TwoStageInstance, x: &DVector<f64>, opts: &PhmOptions) -> Result<(f64, Vec<DVector<f64>>)> {
    let ys = inst
        .scenarios
        .par_iter()
        .enumerate()
        .map(|(j, sc)| {
            let s = second_stage::solve(sc, x, opts.inner_tol, opts.inner_max_iter)?;
            if s.converged() {
                Ok(s.y)
            } else {
                Err(Error::InnerSolve {
                    scenario: j,
                    status: s.status,
                    residual: s.residual,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let res = model::first_stage_residual(inst, x, &ys)?;
    Ok((res, ys))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhmStatus {
    Converged,
    MaxIter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub nu: usize,
    /// `None` on iterations where the residual was not evaluated.
    pub res: Option<f64>,
    /// `‖x̄^{ν+1} − x̄^ν‖`.
    pub step: f64,
    pub x_bar: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhmReport {
    pub status: PhmStatus,
    pub iterations: usize,
    pub res: f64,
    pub x: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub history: Vec<HistoryRow>,
    pub options: PhmOptions,
    pub x0: Vec<f64>,
}

/// A PHM run that stopped on an inner solver failure, with the history up to it.
#[derive(Debug)]
pub struct PhmAbort {
    pub error: Error,
    pub history: Vec<HistoryRow>,
}

impl std::fmt::Display for PhmAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "progressive hedging aborted after {} iterations: {}", self.history.len(), self.error)
    }
}

impl std::error::Error for PhmAbort {}

impl From<Error> for PhmAbort {
    fn from(error: Error) -> Self {
        PhmAbort {
            error,
            history: Vec::new(),
        }
    }
}

/// Iterates [`step`] until the residual at `x̄` is at most `opts.tol` or
/// `opts.max_iter` iterations have run. The residual uses fresh second-stage
/// solutions at `x̄`, not the internal `y_j`.
pub fn solve(inst: &TwoStageInstance, opts: &PhmOptions, x0: Option<&DVector<f64>>) -> std::result::Result<PhmReport, PhmAbort> {
    solve_with(inst, opts, x0, |_, _| {})
}

/// [`solve`] with a callback invoked on every state after a step.
pub fn solve_with<F>(
    inst: &TwoStageInstance,
    opts: &PhmOptions,
    x0: Option<&DVector<f64>>,
    mut observe: F,
) -> std::result::Result<PhmReport, PhmAbort>
where
    F: FnMut(&PhmState, &HistoryRow),
{
    opts.validate()?;
    let x0 = x0.cloned().unwrap_or_else(|| default_start(inst));
    let mut state = init(inst, opts.r, &x0)?;
    let mut history = Vec::new();
    let mut last_res = f64::INFINITY;
    let mut last_y = Vec::new();

    while state.nu < opts.max_iter {
        let next = match step(inst, &state, opts) {
            Ok(s) => s,
            Err(error) => return Err(PhmAbort { error, history }),
        };
        let mut row = HistoryRow {
            nu: next.nu,
            res: None,
            step: (&next.x_bar - &state.x_bar).norm(),
            x_bar: next.x_bar.as_slice().to_vec(),
        };
        let check = next.nu % opts.res_every == 0 || next.nu == opts.max_iter;
        if check {
            match residual_at(inst, &next.x_bar, opts) {
                Ok((res, ys)) => {
                    row.res = Some(res);
                    last_res = res;
                    last_y = ys;
                }
                Err(error) => return Err(PhmAbort { error, history }),
            }
        }
        observe(&next, &row);
        history.push(row);
        state = next;
        if check && last_res <= opts.tol {
            return Ok(report(PhmStatus::Converged, &state, last_res, last_y, history, opts, &x0));
        }
    }
    // the final iteration always evaluates the residual
    Ok(report(PhmStatus::MaxIter, &state, last_res, last_y, history, opts, &x0))
}

fn report(
    status: PhmStatus,
    state: &PhmState,
    res: f64,
    ys: Vec<DVector<f64>>,
    history: Vec<HistoryRow>,
    opts: &PhmOptions,
    x0: &DVector<f64>,
) -> PhmReport {
    PhmReport {
        status,
        iterations: state.nu,
        res,
        x: state.x_bar.as_slice().to_vec(),
        y: ys.into_iter().map(|y| y.as_slice().to_vec()).collect(),
        history,
        options: opts.clone(),
        x0: x0.as_slice().to_vec(),
    }
}

/// Writes history rows as CSV: `nu,res,step,x_bar_0,...`. Unevaluated residuals are empty.
pub fn write_history_csv<W: Write>(out: W, history: &[HistoryRow], n: usize) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["nu".to_string(), "res".to_string(), "step".to_string()];
    header.extend((0..n).map(|i| format!("x_bar_{i}")));
    wtr.write_record(&header)?;
    for row in history {
        let mut rec = vec![
            row.nu.to_string(),
            row.res.map(|r| r.to_string()).unwrap_or_default(),
            row.step.to_string(),
        ];
        rec.extend(row.x_bar.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<history>".into(),
        source,
    })?;
    Ok(())
}

/// The extensive form of the SAA problem as one box LVI in `(x, y_1, …, y_N)`.
///
/// Scenario rows are scaled by their weight, which leaves the solution set
/// unchanged and makes the symmetric part the weighted sum of the scenario
/// block operators' symmetric parts (positive definite on certified instances).
pub fn extensive_form(inst: &TwoStageInstance) -> BoxLvi {
    let (n, m, count) = (inst.n(), inst.m(), inst.n_scenarios());
    let k = n + count * m;
    let mut h = DMatrix::zeros(k, k);
    let mut q = DVector::zeros(k);
    let mut lower = DVector::zeros(k);
    let mut upper = DVector::zeros(k);
    h.view_mut((0, 0), (n, n)).copy_from(&inst.a);
    q.rows_mut(0, n).copy_from(&inst.h1);
    lower.rows_mut(0, n).copy_from(&inst.lower);
    upper.rows_mut(0, n).copy_from(&inst.upper);
    for (j, sc) in inst.scenarios.iter().enumerate() {
        let off = n + j * m;
        let p = sc.weight;
        h.view_mut((0, off), (n, m)).copy_from(&(&sc.b * p));
        h.view_mut((off, 0), (m, n)).copy_from(&(&sc.l * p));
        h.view_mut((off, off), (m, m)).copy_from(&(&sc.m * p));
        q.rows_mut(off, m).copy_from(&(&sc.h2 * p));
        lower.rows_mut(off, m).copy_from(&sc.lower);
        upper.rows_mut(off, m).copy_from(&sc.upper);
    }
    BoxLvi { h, q, lower, upper }
}

#[derive(Clone, Debug)]
pub struct ExtensiveSolution {
    pub x: DVector<f64>,
    pub y: Vec<DVector<f64>>,
    pub residual: f64,
    pub status: SolveStatus,
}

pub fn solve_extensive(inst: &TwoStageInstance, tol: f64, max_iter: usize) -> ExtensiveSolution {
    let (n, m) = (inst.n(), inst.m());
    let p = extensive_form(inst);
    let sol = boxvi::solve(&p, None, tol, max_iter);
    let x = sol.z.rows(0, n).into_owned();
    let y = (0..inst.n_scenarios())
        .map(|j| sol.z.rows(n + j * m, m).into_owned())
        .collect();
    ExtensiveSolution {
        x,
        y,
        residual: sol.residual,
        status: sol.status,
    }
}
