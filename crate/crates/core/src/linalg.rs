//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

const EIG_MAX_ITER: usize = 10_000;

/// `(G + Gᵀ) / 2`.
pub fn sym_part(g: &DMatrix<f64>) -> DMatrix<f64> {
    (g + g.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix, `None` if the QR sweep does not converge.
pub fn min_sym_eig(s: &DMatrix<f64>) -> Option<f64> {
    if s.nrows() == 0 {
        return Some(f64::INFINITY);
    }
    let eig = SymmetricEigen::try_new(s.clone(), f64::EPSILON, EIG_MAX_ITER)?;
    Some(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Largest singular value.
pub fn spectral_norm(g: &DMatrix<f64>) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    g.singular_values().max()
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Solves `M z = rhs` with full pivoting; `None` when the smallest pivot is below
/// `rank_tol` relative to the largest.
pub fn solve_full_piv(m: DMatrix<f64>, rhs: &DVector<f64>, rank_tol: f64) -> Option<DVector<f64>> {
    let k = m.nrows();
    if k == 0 {
        return Some(DVector::zeros(0));
    }
    let lu = m.full_piv_lu();
    let u = lu.u();
    let mut max_piv = 0.0f64;
    let mut min_piv = f64::INFINITY;
    for i in 0..k {
        let p = u[(i, i)].abs();
        max_piv = max_piv.max(p);
        min_piv = min_piv.min(p);
    }
    if !(max_piv > 0.0) || min_piv <= rank_tol * max_piv {
        return None;
    }
    lu.solve(rhs)
}
