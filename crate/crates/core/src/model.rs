//! Data model for two-stage box-constrained stochastic VIs.
//!
//! The first stage reads
//!
//! ```text
//! 0 ∈ A x + Σ_j p_j B_j y_j + h1 + N_[a,b](x)
//! ```
//!
//! and for every scenario `j`
//!
//! ```text
//! 0 ∈ M_j y_j + L_j x + h2_j + N_[l_j,u_j](y_j).
//! ```
//!
//! The instance JSON layout (`InstanceFile`) is the exchange format between the
//! generator, the command line tool and the experiment harness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::linalg;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One realization of the random data.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// n×m coupling of the second-stage decision into the first stage.
    pub b: DMatrix<f64>,
    /// m×n coupling of the first-stage decision into the second stage.
    pub l: DMatrix<f64>,
    /// m×m second-stage operator.
    pub m: DMatrix<f64>,
    pub h2: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub weight: f64,
}

impl Scenario {
    pub fn new(
        b: DMatrix<f64>,
        l: DMatrix<f64>,
        m: DMatrix<f64>,
        h2: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        weight: f64,
    ) -> Result<Self> {
        let sc = Scenario {
            b,
            l,
            m,
            h2,
            lower,
            upper,
            weight,
        };
        sc.validate(sc.b.nrows(), sc.m.nrows())?;
        Ok(sc)
    }

    pub fn n(&self) -> usize {
        self.l.ncols()
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// `[[A, B], [L, M]]`.
    pub fn block_operator(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let m = self.dim();
        let mut g = DMatrix::zeros(n + m, n + m);
        g.view_mut((0, 0), (n, n)).copy_from(a);
        g.view_mut((0, n), (n, m)).copy_from(&self.b);
        g.view_mut((n, 0), (m, n)).copy_from(&self.l);
        g.view_mut((n, n), (m, m)).copy_from(&self.m);
        g
    }

    fn validate(&self, n: usize, m: usize) -> Result<()> {
        let shape = |name: &str, mat: &DMatrix<f64>, r: usize, c: usize| {
            if mat.shape() != (r, c) {
                Err(Error::invalid(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    mat.nrows(),
                    mat.ncols()
                )))
            } else {
                Ok(())
            }
        };
        shape("B", &self.b, n, m)?;
        shape("L", &self.l, m, n)?;
        shape("M", &self.m, m, m)?;
        for (name, v) in [("h2", &self.h2), ("l", &self.lower), ("u", &self.upper)] {
            if v.len() != m {
                return Err(Error::invalid(format!("{name} has length {}, expected {m}", v.len())));
            }
        }
        check_bounds("scenario", &self.lower, &self.upper)?;
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::invalid(format!("scenario weight {} outside [0,1]", self.weight)));
        }
        Ok(())
    }
}

fn check_bounds(what: &str, lo: &DVector<f64>, up: &DVector<f64>) -> Result<()> {
    for (i, (l, u)) in lo.iter().zip(up.iter()).enumerate() {
        if !(l < u) {
            return Err(Error::invalid(format!("{what} bound {i}: lower {l} is not below upper {u}")));
        }
    }
    Ok(())
}

/// Row/column block sizes of a game-structured instance (`n = n1 + n2`, `m = m1 + m2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSplit {
    pub n1: usize,
    pub n2: usize,
    pub m1: usize,
    pub m2: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetadata {
    #[serde(default)]
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<BlockSplit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoStageInstance {
    pub a: DMatrix<f64>,
    pub h1: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Sample order; every reduction over scenarios runs in this order.
    pub scenarios: Vec<Scenario>,
    pub meta: InstanceMetadata,
}

impl TwoStageInstance {
    pub fn new(
        a: DMatrix<f64>,
        h1: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        scenarios: Vec<Scenario>,
    ) -> Result<Self> {
        let inst = TwoStageInstance {
            a,
            h1,
            lower,
            upper,
            scenarios,
            meta: InstanceMetadata {
                version: crate::VERSION.to_string(),
                ..Default::default()
            },
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.scenarios.first().map_or(0, Scenario::dim)
    }

    pub fn n_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    /// Block split from explicit metadata or, failing that, the generator config.
    pub fn block_split(&self) -> Option<BlockSplit> {
        self.meta.blocks.or_else(|| {
            self.meta.generator.as_ref().map(|g| BlockSplit {
                n1: g.n1,
                n2: g.n2,
                m1: g.m1,
                m2: g.m2,
            })
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::invalid("A must be square"));
        }
        if self.h1.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::invalid("h1, a and b must have length n"));
        }
        check_bounds("first-stage", &self.lower, &self.upper)?;
        if self.scenarios.is_empty() {
            return Err(Error::invalid("instance has no scenarios"));
        }
        let m = self.m();
        for (j, sc) in self.scenarios.iter().enumerate() {
            sc.validate(n, m)
                .map_err(|e| Error::invalid(format!("scenario {j}: {e}")))?;
        }
        let total: f64 = self.scenarios.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("scenario weights sum to {total}, expected 1")));
        }
        if let Some(bs) = self.block_split() {
            if bs.n1 + bs.n2 != n || bs.m1 + bs.m2 != m {
                return Err(Error::invalid("block split does not match instance dimensions"));
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        file.into_instance()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&InstanceFile::from(self))?;
        s.push('\n');
        Ok(s)
    }
}

/// Componentwise median `max(lo, min(v, up))`.
pub fn mid(v: &DVector<f64>, lo: &DVector<f64>, up: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != lo.len() || v.len() != up.len() {
        return Err(Error::invalid(format!(
            "mid: lengths {}, {}, {} differ",
            v.len(),
            lo.len(),
            up.len()
        )));
    }
    if let Some(i) = (0..v.len()).find(|&i| lo[i] > up[i]) {
        return Err(Error::invalid(format!("mid: lo[{i}] > up[{i}]")));
    }
    Ok(mid_unchecked(v, lo, up))
}

pub(crate) fn mid_unchecked(v: &DVector<f64>, lo: &DVector<f64>, up: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        v.len(),
        v.iter().zip(lo.iter()).zip(up.iter()).map(|((&x, &l), &u)| clamp(x, l, u)),
    )
}

#[inline]
pub(crate) fn clamp(x: f64, l: f64, u: f64) -> f64 {
    l.max(x.min(u))
}

/// `‖x − mid(x − g, lo, up)‖₂`.
pub(crate) fn natural_map_norm(x: &DVector<f64>, g: &DVector<f64>, lo: &DVector<f64>, up: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let r = x[i] - clamp(x[i] - g[i], lo[i], up[i]);
        acc += r * r;
    }
    acc.sqrt()
}

/// Natural-map residual of the first-stage VI given second-stage responses `ys`
/// (one per scenario, in scenario order). The expectation is the weighted sum
/// `Σ p_j B_j y_j`, which reduces to the plain sample average for uniform weights.
pub fn first_stage_residual(inst: &TwoStageInstance, x: &DVector<f64>, ys: &[DVector<f64>]) -> Result<f64> {
    let n = inst.n();
    if x.len() != n {
        return Err(Error::invalid(format!("x has length {}, expected {n}", x.len())));
    }
    if ys.len() != inst.n_scenarios() {
        return Err(Error::invalid(format!(
            "{} second-stage vectors for {} scenarios",
            ys.len(),
            inst.n_scenarios()
        )));
    }
    let mut g = &inst.a * x + &inst.h1;
    for (j, (sc, y)) in inst.scenarios.iter().zip(ys).enumerate() {
        if y.len() != sc.dim() {
            return Err(Error::invalid(format!("y[{j}] has length {}, expected {}", y.len(), sc.dim())));
        }
        g.gemv(sc.weight, &sc.b, y, 1.0);
    }
    Ok(natural_map_norm(x, &g, &inst.lower, &inst.upper))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCertificate {
    /// λ_min of the symmetric part of `[[A, B_j], [L_j, M_j]]`, per scenario.
    pub min_eig_sym: Vec<f64>,
    pub kappa: f64,
    pub certified: bool,
}

/// Strong-monotonicity certificate over the sampled scenarios.
///
/// `zᵀ G_j z ≥ λ_min(sym G_j) ‖z‖²` for every `z`, so a positive minimum over
/// scenarios is a valid modulus on the sample.
pub fn certify_strong_monotonicity(inst: &TwoStageInstance) -> Result<MonotonicityCertificate> {
    use rayon::prelude::*;

    let min_eig_sym = inst
        .scenarios
        .par_iter()
        .enumerate()
        .map(|(j, sc)| {
            let g = sc.block_operator(&inst.a);
            linalg::min_sym_eig(&linalg::sym_part(&g))
                .ok_or_else(|| Error::numerical(Some(j), "symmetric eigenvalue iteration did not converge"))
        })
        .collect::<Result<Vec<_>>>()?;
    let min = min_eig_sym.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa = min.max(0.0);
    Ok(MonotonicityCertificate {
        min_eig_sym,
        kappa,
        certified: kappa > 0.0,
    })
}

// ---------------------------------------------------------------------------
// JSON exchange format

/// On-disk instance: matrices are flat row-major arrays.
#[derive(Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a_mat: Vec<f64>,
    pub h1: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub scenarios: Vec<ScenarioRecord>,
    #[serde(default)]
    pub metadata: InstanceMetadata,
}

#[derive(Serialize, Deserialize)]
pub struct ScenarioRecord {
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "L")]
    pub l_mat: Vec<f64>,
    #[serde(rename = "M")]
    pub m_mat: Vec<f64>,
    pub h2: Vec<f64>,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    pub weight: f64,
}

fn row_major(mat: &DMatrix<f64>) -> Vec<f64> {
    mat.transpose().as_slice().to_vec()
}

fn from_row_major(name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::invalid(format!(
            "{name} has {} entries, expected {rows}x{cols}",
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn vector(name: &str, len: usize, data: Vec<f64>) -> Result<DVector<f64>> {
    if data.len() != len {
        return Err(Error::invalid(format!("{name} has {} entries, expected {len}", data.len())));
    }
    Ok(DVector::from_vec(data))
}

impl From<&TwoStageInstance> for InstanceFile {
    fn from(inst: &TwoStageInstance) -> Self {
        InstanceFile {
            n: inst.n(),
            m: inst.m(),
            a_mat: row_major(&inst.a),
            h1: inst.h1.as_slice().to_vec(),
            a: inst.lower.as_slice().to_vec(),
            b: inst.upper.as_slice().to_vec(),
            scenarios: inst
                .scenarios
                .iter()
                .map(|sc| ScenarioRecord {
                    b: row_major(&sc.b),
                    l_mat: row_major(&sc.l),
                    m_mat: row_major(&sc.m),
                    h2: sc.h2.as_slice().to_vec(),
                    l: sc.lower.as_slice().to_vec(),
                    u: sc.upper.as_slice().to_vec(),
                    weight: sc.weight,
                })
                .collect(),
            metadata: inst.meta.clone(),
        }
    }
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<TwoStageInstance> {
        let (n, m) = (self.n, self.m);
        let scenarios = self
            .scenarios
            .into_iter()
            .enumerate()
            .map(|(j, r)| {
                let ctx = |e: Error| Error::invalid(format!("scenario {j}: {e}"));
                Ok(Scenario {
                    b: from_row_major("B", n, m, r.b).map_err(ctx)?,
                    l: from_row_major("L", m, n, r.l_mat).map_err(ctx)?,
                    m: from_row_major("M", m, m, r.m_mat).map_err(ctx)?,
                    h2: vector("h2", m, r.h2).map_err(ctx)?,
                    lower: vector("l", m, r.l).map_err(ctx)?,
                    upper: vector("u", m, r.u).map_err(ctx)?,
                    weight: r.weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let inst = TwoStageInstance {
            a: from_row_major("A", n, n, self.a_mat)?,
            h1: vector("h1", n, self.h1)?,
            lower: vector("a", n, self.a)?,
            upper: vector("b", n, self.b)?,
            scenarios,
            meta: self.metadata,
        };
        inst.validate()?;
        if inst.m() != m {
            return Err(Error::invalid("declared m does not match scenario data"));
        }
        Ok(inst)
    }
}
