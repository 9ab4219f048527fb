//! Box-constrained linear VIs `0 ∈ H z + q + N_[lo,up](z)`.
//!
//! [`solve`] runs a semismooth Newton method on the natural map
//! `F(z) = z − mid(z − (H z + q), lo, up)`, whose zeros are exactly the
//! solutions. [`brute_force`] enumerates active sets and is meant as a test
//! oracle for small problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{clamp, mid_unchecked};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

const ARMIJO: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-14;
const RANK_TOL: f64 = 1e-13;

/// Largest dimension [`brute_force`] accepts.
pub const BRUTE_FORCE_MAX_DIM: usize = 12;
const BF_SIGN_TOL: f64 = 1e-10;
const BF_AGREE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct BoxLvi {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxLvi {
    pub fn new(h: DMatrix<f64>, q: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let k = q.len();
        if h.shape() != (k, k) {
            return Err(Error::invalid(format!(
                "H is {}x{}, q has length {k}",
                h.nrows(),
                h.ncols()
            )));
        }
        if lower.len() != k || upper.len() != k {
            return Err(Error::invalid("box bounds must match q in length"));
        }
        if let Some(i) = (0..k).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::invalid(format!(
                "box bound {i}: lower {} is not below upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(BoxLvi { h, q, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `H z + q`.
    pub fn operator(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.h * z + &self.q
    }

    /// `F(z) = z − mid(z − (H z + q), lo, up)`.
    pub fn natural_map(&self, z: &DVector<f64>) -> DVector<f64> {
        let v = z - self.operator(z);
        z - mid_unchecked(&v, &self.lower, &self.upper)
    }

    pub fn residual(&self, z: &DVector<f64>) -> f64 {
        self.natural_map(z).norm()
    }

    /// `mid(0, lo, up)`.
    pub fn default_start(&self) -> DVector<f64> {
        mid_unchecked(&DVector::zeros(self.dim()), &self.lower, &self.upper)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Singular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxLviSolution {
    pub z: DVector<f64>,
    /// Natural-map norm at `z`.
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl BoxLviSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Semismooth Newton with Armijo backtracking on `‖F‖`.
///
/// The generalized Jacobian is `I − D + D H` with `D_ii = 1` exactly when
/// `(z − H z − q)_i` lies strictly inside `(lo_i, up_i)`. Ties go to the bound
/// branch. `z0 = None` starts from `mid(0, lo, up)`.
///
/// The solver assumes `H` has a positive definite symmetric part and does not
/// check it.
pub fn solve(p: &BoxLvi, z0: Option<&DVector<f64>>, tol: f64, max_iter: usize) -> BoxLviSolution {
    let k = p.dim();
    let mut z = match z0 {
        Some(z0) if z0.len() == k => z0.clone(),
        _ => p.default_start(),
    };
    let mut f = p.natural_map(&z);
    let mut norm = f.norm();
    let mut iterations = 0;

    loop {
        if norm <= tol {
            return BoxLviSolution {
                z,
                residual: norm,
                iterations,
                status: SolveStatus::Converged,
            };
        }
        if iterations >= max_iter {
            return BoxLviSolution {
                z,
                residual: norm,
                iterations,
                status: SolveStatus::MaxIter,
            };
        }

        let v = &z - p.operator(&z);
        let mut jac = DMatrix::identity(k, k);
        for i in 0..k {
            if p.lower[i] < v[i] && v[i] < p.upper[i] {
                jac.row_mut(i).copy_from(&p.h.row(i));
            }
        }
        let Some(dir) = linalg::solve_full_piv(jac, &(-&f), RANK_TOL) else {
            return BoxLviSolution {
                z,
                residual: norm,
                iterations,
                status: SolveStatus::Singular,
            };
        };

        let mut t = 1.0;
        let accepted = loop {
            let trial = &z + &dir * t;
            let f_trial = p.natural_map(&trial);
            let n_trial = f_trial.norm();
            if n_trial <= (1.0 - ARMIJO * t) * norm {
                break Some((trial, f_trial, n_trial));
            }
            t *= BACKTRACK;
            if t < MIN_STEP {
                break None;
            }
        };
        iterations += 1;
        match accepted {
            Some((trial, f_trial, n_trial)) => {
                z = trial;
                f = f_trial;
                norm = n_trial;
            }
            // The direction is not a descent direction for ‖F‖ at a kink. A
            // projection step moves off the tie without increasing the error
            // much; the next Newton step sees a well-defined piece.
            None => {
                let trial = projection_step(p, &z);
                let f_trial = p.natural_map(&trial);
                let n_trial = f_trial.norm();
                if n_trial < norm {
                    z = trial;
                    f = f_trial;
                    norm = n_trial;
                } else {
                    return BoxLviSolution {
                        z,
                        residual: norm,
                        iterations,
                        status: SolveStatus::MaxIter,
                    };
                }
            }
        }
    }
}

fn projection_step(p: &BoxLvi, z: &DVector<f64>) -> DVector<f64> {
    let scale = p.h.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0) * p.dim() as f64;
    let g = p.operator(z);
    DVector::from_iterator(
        z.len(),
        (0..z.len()).map(|i| clamp(z[i] - g[i] / scale, p.lower[i], p.upper[i])),
    )
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Lower,
    Free,
    Upper,
}

/// Active-set enumeration over all `3^k` assignments of each coordinate to
/// {lower bound, interior, upper bound}.
///
/// Requires `k ≤ 12`. Returns [`Error::Infeasible`] when no assignment passes
/// and [`Error::NonUnique`] when two accepted points disagree by more than 1e-8.
pub fn brute_force(p: &BoxLvi) -> Result<DVector<f64>> {
    let k = p.dim();
    if k > BRUTE_FORCE_MAX_DIM {
        return Err(Error::invalid(format!(
            "brute force limited to dimension {BRUTE_FORCE_MAX_DIM}, got {k}"
        )));
    }
    let total = 3usize.pow(k as u32);
    let mut slots = vec![Slot::Lower; k];
    let mut found: Option<DVector<f64>> = None;
    let mut worst = 0.0f64;

    for code in 0..total {
        let mut c = code;
        for s in slots.iter_mut() {
            *s = match c % 3 {
                0 => Slot::Lower,
                1 => Slot::Free,
                _ => Slot::Upper,
            };
            c /= 3;
        }
        let Some(z) = candidate(p, &slots) else { continue };
        match &found {
            None => found = Some(z),
            Some(prev) => worst = worst.max(linalg::inf_norm(&(prev - &z))),
        }
    }
    if worst > BF_AGREE_TOL {
        return Err(Error::NonUnique(worst));
    }
    found.ok_or(Error::Infeasible)
}

fn candidate(p: &BoxLvi, slots: &[Slot]) -> Option<DVector<f64>> {
    let k = p.dim();
    let free: Vec<usize> = (0..k).filter(|&i| slots[i] == Slot::Free).collect();
    let mut z = DVector::zeros(k);
    for i in 0..k {
        z[i] = match slots[i] {
            Slot::Lower => p.lower[i],
            Slot::Upper => p.upper[i],
            Slot::Free => 0.0,
        };
    }
    if !free.is_empty() {
        let nf = free.len();
        let mut sub = DMatrix::zeros(nf, nf);
        let mut rhs = DVector::zeros(nf);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                sub[(a, b)] = p.h[(i, j)];
            }
            let mut r = -p.q[i];
            for j in 0..k {
                if slots[j] != Slot::Free {
                    r -= p.h[(i, j)] * z[j];
                }
            }
            rhs[a] = r;
        }
        let sol = linalg::solve_full_piv(sub, &rhs, RANK_TOL)?;
        for (a, &i) in free.iter().enumerate() {
            if !(p.lower[i] < sol[a] && sol[a] < p.upper[i]) {
                return None;
            }
            z[i] = sol[a];
        }
    }
    let g = p.operator(&z);
    for i in 0..k {
        let ok = match slots[i] {
            Slot::Lower => g[i] >= -BF_SIGN_TOL,
            Slot::Upper => g[i] <= BF_SIGN_TOL,
            Slot::Free => true,
        };
        if !ok {
            return None;
        }
    }
    Some(z)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random `H = S + K + c I` with `S` PSD, `K` skew, so `sym(H) ⪰ c I`;
    /// random `q`, box `[0,1]^k`.
    pub fn random_pd_lvi(k: usize, seed: u64) -> BoxLvi {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let w = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let h = g.transpose() * &g + (&w - w.transpose()) + DMatrix::identity(k, k) * 0.1;
        let q = DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0));
        BoxLvi::new(h, q, DVector::zeros(k), DVector::from_element(k, 1.0)).unwrap()
    }
}
