//! Second-stage solution map `ŷ(x, ξ)` and its generalized Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::boxvi::{self, BoxLvi, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Scenario;

/// Margin below which a coordinate counts as degenerate (not strictly complementary).
pub const ACTIVITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activity {
    Lower,
    Interior,
    Upper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondStageSolution {
    pub y: DVector<f64>,
    pub active: Vec<Activity>,
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Distance of `y − (M y + L x + h2)` from the nearest kink per coordinate.
    pub margins: Vec<f64>,
}

impl SecondStageSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// No coordinate sits within [`ACTIVITY_TOL`] of a kink of the natural map.
    pub fn strictly_complementary(&self) -> bool {
        self.margins.iter().all(|&m| m > ACTIVITY_TOL)
    }
}

/// The box LVI in `y` for fixed `x`: `H = M`, `q = L x + h2`, box `[l, u]`.
pub fn lvi(sc: &Scenario, x: &DVector<f64>) -> Result<BoxLvi> {
    if x.len() != sc.n() {
        return Err(Error::invalid(format!("x has length {}, expected {}", x.len(), sc.n())));
    }
    let q = &sc.l * x + &sc.h2;
    Ok(BoxLvi {
        h: sc.m.clone(),
        q,
        lower: sc.lower.clone(),
        upper: sc.upper.clone(),
    })
}

pub fn solve(sc: &Scenario, x: &DVector<f64>, tol: f64, max_iter: usize) -> Result<SecondStageSolution> {
    solve_from(sc, x, None, tol, max_iter)
}

/// [`solve`] with an explicit starting point.
pub fn solve_from(
    sc: &Scenario,
    x: &DVector<f64>,
    y0: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<SecondStageSolution> {
    let p = lvi(sc, x)?;
    let sol = boxvi::solve(&p, y0, tol, max_iter);
    Ok(classify(&p, sol))
}

fn classify(p: &BoxLvi, sol: boxvi::BoxLviSolution) -> SecondStageSolution {
    let v = &sol.z - p.operator(&sol.z);
    let k = p.dim();
    let mut active = Vec::with_capacity(k);
    let mut margins = Vec::with_capacity(k);
    for i in 0..k {
        let (lo, up) = (p.lower[i], p.upper[i]);
        let a = if v[i] <= lo {
            Activity::Lower
        } else if v[i] >= up {
            Activity::Upper
        } else {
            Activity::Interior
        };
        active.push(a);
        margins.push((v[i] - lo).abs().min((v[i] - up).abs()));
    }
    SecondStageSolution {
        y: sol.z,
        active,
        residual: sol.residual,
        iterations: sol.iterations,
        status: sol.status,
        margins,
    }
}

fn selection(active: &[Activity]) -> DVector<f64> {
    DVector::from_iterator(
        active.len(),
        active.iter().map(|a| if *a == Activity::Interior { 1.0 } else { 0.0 }),
    )
}

/// `−(I − D + D M)⁻¹ D L` for a 0/1 diagonal selection `d`.
pub fn selection_jacobian(sc: &Scenario, d: &DVector<f64>) -> Option<DMatrix<f64>> {
    let m = sc.dim();
    let mut lhs = DMatrix::identity(m, m);
    let mut dl = DMatrix::zeros(m, sc.n());
    for i in 0..m {
        if d[i] != 0.0 {
            for j in 0..m {
                lhs[(i, j)] = (1.0 - d[i]) * if i == j { 1.0 } else { 0.0 } + d[i] * sc.m[(i, j)];
            }
            dl.row_mut(i).copy_from(&(sc.l.row(i) * d[i]));
        }
    }
    let lu = lhs.lu();
    let mut out = lu.solve(&dl)?;
    out.neg_mut();
    if out.iter().all(|v| v.is_finite()) {
        Some(out)
    } else {
        None
    }
}

/// Element of the Clarke generalized Jacobian of `ŷ(·, ξ)` at `x` picked by the
/// activity pattern of `sol` (`D_ii = 1` on interior coordinates, 0 at bounds).
/// It is the derivative when `sol` is strictly complementary.
pub fn jacobian(sc: &Scenario, x: &DVector<f64>, sol: &SecondStageSolution) -> Result<DMatrix<f64>> {
    if x.len() != sc.n() || sol.active.len() != sc.dim() {
        return Err(Error::invalid("jacobian: dimension mismatch"));
    }
    let d = selection(&sol.active);
    selection_jacobian(sc, &d).ok_or_else(|| Error::numerical(None, "I − D + D M is singular"))
}

/// Whether the second stage has a solution at `x`, probed by the solver with
/// its default budget.
pub fn feasible(sc: &Scenario, x: &DVector<f64>) -> bool {
    solve(sc, x, boxvi::DEFAULT_TOL, boxvi::DEFAULT_MAX_ITER).is_ok_and(|s| s.converged())
}

/// Central difference `(ŷ(x + h d) − ŷ(x − h d)) / 2h`, or `None` when either
/// solve fails or the two endpoints have different activity patterns (the
/// segment then crosses a kink of the piecewise affine map).
pub fn central_difference(sc: &Scenario, x: &DVector<f64>, d: &DVector<f64>, h: f64) -> Result<Option<DVector<f64>>> {
    let plus = solve(sc, &(x + d * h), boxvi::DEFAULT_TOL, boxvi::DEFAULT_MAX_ITER)?;
    let minus = solve(sc, &(x - d * h), boxvi::DEFAULT_TOL, boxvi::DEFAULT_MAX_ITER)?;
    if !plus.converged() || !minus.converged() || plus.active != minus.active {
        return Ok(None);
    }
    Ok(Some((plus.y - minus.y) / (2.0 * h)))
}

/// Lipschitz constant of `ŷ(·, ξ)` as the max of `‖(I − D + D M)⁻¹ D L‖₂` over
/// all 0/1 selections (enumerated for `m ≤ max_enumerate`, otherwise `samples`
/// selections drawn from `rng`).
pub fn lipschitz_bound<R: rand::Rng>(sc: &Scenario, max_enumerate: usize, samples: usize, rng: &mut R) -> f64 {
    let m = sc.dim();
    let eval = |d: DVector<f64>| selection_jacobian(sc, &d).map_or(f64::INFINITY, |j| linalg::spectral_norm(&j));
    if m <= max_enumerate {
        (0u64..1 << m)
            .map(|bits| eval(DVector::from_fn(m, |i, _| ((bits >> i) & 1) as f64)))
            .fold(0.0, f64::max)
    } else {
        (0..samples)
            .map(|_| eval(DVector::from_fn(m, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 })))
            .fold(0.0, f64::max)
    }
}
