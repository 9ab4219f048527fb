//! Seeded random instances of the two-player stochastic game reformulated as a
//! two-stage box VI, built so that every `[[A, B(ξ)], [L(ξ), M(ξ)]]` is positive
//! definite.
//!
//! Draw order from a single `ChaCha8Rng` stream seeded with `seed`:
//!
//! 1. `G` (n1×n1, standard normal, row-major); `H1 = Q Λ Qᵀ` with `Q` from the QR
//!    factorization of `G`, then `Λ` (n1 draws, U\[1,2\]).
//! 2. `P1` (n1×n2), `P2` (n2×n1), entries U\[-1,1\], row-major.
//! 3. `S̄11`, `S̄12`, `S̄21`, `S̄22`, `Ō1`, `Ō2`, entries U\[-1,1\], row-major.
//! 4. `Q̄1` then `Q̄2`, upper triangle row-major: diagonal entries in
//!    (m−1+α, m+α\], off-diagonal U\[-1,1\], mirrored.
//! 5. `b` ~ U\[1,50\]ⁿ, `l̄` ~ U\[0,1\]ᵐ, `ū` ~ U\[3,50\]ᵐ, `h1` ~ U\[-5,5\]ⁿ.
//! 6. Per scenario: `ξ_1..ξ_10` ~ U\[0,1\], then `m` draws U\[-1,1\] that form `h2(ξ)`.
//!
//! `H2 = ¼ (P1ᵀ + P2) H1⁻¹ (P1 + P2ᵀ) + α I` makes the Schur complement of
//! `A + Aᵀ` equal to `2α I`, and the diagonal shift `(n+m)² / λ_min(A + Aᵀ)` on
//! `Q1`, `Q2` dominates the coupling `‖B + Lᵀ‖²`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BlockSplit, InstanceMetadata, Scenario, TwoStageInstance};

/// Number of `ξ` components that scale matrices and bounds; the rest form `h2`.
pub const XI_SCALING_DIM: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n1: usize,
    pub n2: usize,
    pub m1: usize,
    pub m2: usize,
    pub alpha: f64,
    pub n_scenarios: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n1: 3,
            n2: 3,
            m1: 5,
            m2: 5,
            alpha: 1.0,
            n_scenarios: 10,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn m(&self) -> usize {
        self.m1 + self.m2
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n1, self.n2, self.m1, self.m2].contains(&0) {
            return Err(Error::invalid("block dimensions must be at least 1"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.n_scenarios == 0 {
            return Err(Error::invalid("n_scenarios must be at least 1"));
        }
        Ok(())
    }
}

/// Scenario-independent data of one test problem.
#[derive(Clone, Debug)]
pub struct Structure {
    pub split: BlockSplit,
    pub alpha: f64,
    pub a: DMatrix<f64>,
    pub h1: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub s11: DMatrix<f64>,
    pub s12: DMatrix<f64>,
    pub s21: DMatrix<f64>,
    pub s22: DMatrix<f64>,
    pub o1: DMatrix<f64>,
    pub o2: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub l_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
    /// `(n+m)² / λ_min(A + Aᵀ)`.
    pub shift: f64,
}

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn uniform_vector<R: Rng>(rng: &mut R, len: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.random_range(lo..hi)))
}

fn diag_dominant_symmetric<R: Rng>(rng: &mut R, k: usize, m: usize, alpha: f64) -> DMatrix<f64> {
    let top = m as f64 + alpha;
    let mut q = DMatrix::zeros(k, k);
    for i in 0..k {
        // top − U[0,1) lies in (m−1+α, m+α]
        q[(i, i)] = top - rng.random_range(0.0..1.0);
        for j in i + 1..k {
            let v = rng.random_range(-1.0..1.0);
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    q
}

fn random_spd<R: Rng>(rng: &mut R, k: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..k * k).map(|_| rng.sample(StandardNormal)).collect();
    let g = DMatrix::from_row_slice(k, k, &data);
    let q = g.qr().q();
    let lambda = uniform_vector(rng, k, 1.0, 2.0);
    let h = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    linalg::sym_part(&h)
}

fn block2(tl: &DMatrix<f64>, tr: &DMatrix<f64>, bl: &DMatrix<f64>, br: &DMatrix<f64>) -> DMatrix<f64> {
    let (r1, c1) = tl.shape();
    let (r2, c2) = br.shape();
    let mut out = DMatrix::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(tl);
    out.view_mut((0, c1), (r1, c2)).copy_from(tr);
    out.view_mut((r1, 0), (r2, c1)).copy_from(bl);
    out.view_mut((r1, c1), (r2, c2)).copy_from(br);
    out
}

impl Structure {
    /// Draws the structural matrices, bounds and `h1` (steps 1–5 of the draw order).
    pub fn draw<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (n1, n2, m1, m2) = (cfg.n1, cfg.n2, cfg.m1, cfg.m2);
        let (n, m) = (cfg.n(), cfg.m());
        let alpha = cfg.alpha;

        let h1_blk = random_spd(rng, n1);
        let p1 = uniform_matrix(rng, n1, n2, -1.0, 1.0);
        let p2 = uniform_matrix(rng, n2, n1, -1.0, 1.0);
        let h1_inv = h1_blk
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical(None, "generated H1 is not positive definite"))?
            .inverse();
        let c = &p1 + p2.transpose();
        let h2_blk = linalg::sym_part(&(c.transpose() * &h1_inv * &c * 0.25))
            + DMatrix::identity(n2, n2) * alpha;
        let a = block2(&h1_blk, &p1, &p2, &h2_blk);

        let s11 = uniform_matrix(rng, m1, n1, -1.0, 1.0);
        let s12 = uniform_matrix(rng, m1, n2, -1.0, 1.0);
        let s21 = uniform_matrix(rng, m2, n1, -1.0, 1.0);
        let s22 = uniform_matrix(rng, m2, n2, -1.0, 1.0);
        let o1 = uniform_matrix(rng, m1, m2, -1.0, 1.0);
        let o2 = uniform_matrix(rng, m2, m1, -1.0, 1.0);
        let q1 = diag_dominant_symmetric(rng, m1, m, alpha);
        let q2 = diag_dominant_symmetric(rng, m2, m, alpha);

        let upper = uniform_vector(rng, n, 1.0, 50.0);
        let l_bar = uniform_vector(rng, m, 0.0, 1.0);
        let u_bar = uniform_vector(rng, m, 3.0, 50.0);
        let h1 = uniform_vector(rng, n, -5.0, 5.0);

        let lam = linalg::min_sym_eig(&(&a + a.transpose()))
            .ok_or_else(|| Error::numerical(None, "eigenvalues of A + Aᵀ did not converge"))?;
        if !(lam > 0.0) {
            return Err(Error::numerical(None, format!("λ_min(A + Aᵀ) = {lam} is not positive")));
        }
        let shift = ((n + m) * (n + m)) as f64 / lam;

        Ok(Structure {
            split: BlockSplit { n1, n2, m1, m2 },
            alpha,
            a,
            h1,
            lower: DVector::zeros(n),
            upper,
            s11,
            s12,
            s21,
            s22,
            o1,
            o2,
            q1,
            q2,
            l_bar,
            u_bar,
            shift,
        })
    }

    pub fn n(&self) -> usize {
        self.split.n1 + self.split.n2
    }

    pub fn m(&self) -> usize {
        self.split.m1 + self.split.m2
    }

    /// Length of one `ξ` sample.
    pub fn xi_dim(&self) -> usize {
        XI_SCALING_DIM + self.m()
    }

    pub fn sample_xi<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut xi = Vec::with_capacity(self.xi_dim());
        xi.extend((0..XI_SCALING_DIM).map(|_| rng.random_range(0.0..1.0)));
        xi.extend((0..self.m()).map(|_| rng.random_range(-1.0..1.0)));
        xi
    }

    /// Assembles `B(ξ)`, `L(ξ)`, `M(ξ)`, `h2(ξ)`, `l(ξ)`, `u(ξ)` (`xi` is 0-based).
    pub fn scenario(&self, xi: &[f64], weight: f64) -> Result<Scenario> {
        if xi.len() != self.xi_dim() {
            return Err(Error::invalid(format!("ξ has length {}, expected {}", xi.len(), self.xi_dim())));
        }
        let BlockSplit { n1, n2, m1, m2 } = self.split;
        let s11 = &self.s11 * xi[0];
        let s12 = &self.s12 * xi[1];
        let s21 = &self.s21 * xi[2];
        let s22 = &self.s22 * xi[3];
        let o1 = &self.o1 * xi[4];
        let o2 = &self.o2 * xi[5];
        let q1 = &self.q1 + DMatrix::identity(m1, m1) * (xi[6] + self.shift);
        let q2 = &self.q2 + DMatrix::identity(m2, m2) * (xi[7] + self.shift);

        let b = block2(
            &s11.transpose(),
            &DMatrix::zeros(n1, m2),
            &DMatrix::zeros(n2, m1),
            &s22.transpose(),
        );
        let l = block2(&s11, &s12, &s21, &s22);
        let m = block2(&q1, &o1, &o2, &q2);
        let h2 = DVector::from_column_slice(&xi[XI_SCALING_DIM..]);
        let lower = &self.l_bar * (1.0 + xi[8]);
        let upper = &self.u_bar * (1.0 + xi[9]);
        Scenario::new(b, l, m, h2, lower, upper, weight)
    }

    pub fn sample_scenarios<R: Rng>(&self, rng: &mut R, count: usize) -> Result<Vec<Scenario>> {
        let w = 1.0 / count as f64;
        (0..count)
            .map(|_| {
                let xi = self.sample_xi(rng);
                self.scenario(&xi, w)
            })
            .collect()
    }

    pub fn instance(&self, scenarios: Vec<Scenario>, cfg: Option<&GeneratorConfig>) -> Result<TwoStageInstance> {
        let mut inst = TwoStageInstance::new(
            self.a.clone(),
            self.h1.clone(),
            self.lower.clone(),
            self.upper.clone(),
            scenarios,
        )?;
        inst.meta = InstanceMetadata {
            version: crate::VERSION.to_string(),
            blocks: Some(self.split),
            generator: cfg.cloned(),
        };
        Ok(inst)
    }
}

/// Generates one instance with `cfg.n_scenarios` equally weighted scenarios.
pub fn generate(cfg: &GeneratorConfig) -> Result<TwoStageInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let structure = Structure::draw(cfg, &mut rng)?;
    let scenarios = structure.sample_scenarios(&mut rng, cfg.n_scenarios)?;
    structure.instance(scenarios, Some(cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchurReport {
    /// λ_min of the symmetric part of the `H1` block.
    pub h1_min_eig: f64,
    /// λ_min(4 H2 − (P1ᵀ + P2) H1⁻¹ (P1 + P2ᵀ)), symmetric parts throughout.
    pub first_stage_margin: f64,
    /// λ_min(M + Mᵀ − (B + Lᵀ)ᵀ (A + Aᵀ)⁻¹ (B + Lᵀ)) per scenario.
    pub second_stage_margins: Vec<f64>,
    pub min_second_stage_margin: f64,
    pub passed: bool,
}

/// Block-wise sufficient condition for strong monotonicity via Schur complements.
///
/// Needs the block split (`n1`, `n2`) from the instance metadata. A margin is
/// reported as `-inf` when the matrix it needs to invert is singular.
pub fn schur_check(inst: &TwoStageInstance) -> Result<SchurReport> {
    let split = inst
        .block_split()
        .ok_or_else(|| Error::invalid("instance carries no block split metadata"))?;
    let (n1, n2) = (split.n1, split.n2);
    let a = &inst.a;
    let h1 = linalg::sym_part(&a.view((0, 0), (n1, n1)).into_owned());
    let p1 = a.view((0, n1), (n1, n2)).into_owned();
    let p2 = a.view((n1, 0), (n2, n1)).into_owned();
    let h2 = linalg::sym_part(&a.view((n1, n1), (n2, n2)).into_owned());

    let eig = |s: &DMatrix<f64>, j: Option<usize>| {
        linalg::min_sym_eig(&linalg::sym_part(s))
            .ok_or_else(|| Error::numerical(j, "symmetric eigenvalue iteration did not converge"))
    };

    let h1_min_eig = eig(&h1, None)?;
    let c = &p1 + p2.transpose();
    let first_stage_margin = match h1.clone().try_inverse() {
        Some(inv) => eig(&(h2 * 4.0 - c.transpose() * inv * &c), None)?,
        None => f64::NEG_INFINITY,
    };

    let a_sym2 = a + a.transpose();
    let a_sym2_inv = a_sym2.try_inverse();
    let second_stage_margins = inst
        .scenarios
        .iter()
        .enumerate()
        .map(|(j, sc)| match &a_sym2_inv {
            Some(inv) => {
                let c = &sc.b + sc.l.transpose();
                eig(&(&sc.m + sc.m.transpose() - c.transpose() * inv * &c), Some(j))
            }
            None => Ok(f64::NEG_INFINITY),
        })
        .collect::<Result<Vec<_>>>()?;
    let min_second_stage_margin = second_stage_margins.iter().copied().fold(f64::INFINITY, f64::min);
    let passed = h1_min_eig > 0.0 && first_stage_margin > 0.0 && min_second_stage_margin > 0.0;
    Ok(SchurReport {
        h1_min_eig,
        first_stage_margin,
        second_stage_margins,
        min_second_stage_margin,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::certify_strong_monotonicity;

    #[test]
    fn default_dimensions_and_bounds() {
        for seed in 0..5 {
            let inst = generate(&GeneratorConfig {
                seed,
                ..Default::default()
            })
            .unwrap();
            assert_eq!((inst.n(), inst.m(), inst.n_scenarios()), (6, 10, 10));
            for sc in &inst.scenarios {
                assert!(sc.lower.max() <= 2.0 && sc.upper.min() >= 3.0);
                assert!(sc.lower.iter().zip(sc.upper.iter()).all(|(l, u)| l < u));
            }
            assert!(inst.lower.iter().all(|&v| v == 0.0));
            assert!(inst.upper.iter().all(|&v| (1.0..=50.0).contains(&v)));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = GeneratorConfig {
            seed: 42,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = generate(&GeneratorConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn certified_and_schur_margins() {
        for alpha in [0.1, 1.0, 3.0] {
            let inst = generate(&GeneratorConfig {
                alpha,
                seed: 9,
                ..Default::default()
            })
            .unwrap();
            let cert = certify_strong_monotonicity(&inst).unwrap();
            assert!(cert.certified, "alpha {alpha}");
            let rep = schur_check(&inst).unwrap();
            assert!(rep.passed);
            assert!((rep.first_stage_margin - 4.0 * alpha).abs() < 1e-8 * (1.0 + alpha));
            assert!(rep.min_second_stage_margin >= 2.0 * alpha - 1e-8);
        }
    }

    #[test]
    fn b_blocks_are_transposed_l_blocks() {
        let inst = generate(&GeneratorConfig {
            n1: 2,
            n2: 3,
            m1: 4,
            m2: 2,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        for sc in &inst.scenarios {
            let b11 = sc.b.view((0, 0), (2, 4)).into_owned();
            let l11 = sc.l.view((0, 0), (4, 2)).into_owned();
            assert_eq!(b11, l11.transpose());
            let b22 = sc.b.view((2, 4), (3, 2)).into_owned();
            let l22 = sc.l.view((4, 2), (2, 3)).into_owned();
            assert_eq!(b22, l22.transpose());
            assert!(sc.b.view((0, 4), (2, 2)).iter().all(|&v| v == 0.0));
            assert!(sc.b.view((2, 0), (3, 4)).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn h2_dimension_follows_m() {
        let inst = generate(&GeneratorConfig {
            m1: 2,
            m2: 1,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(inst.m(), 3);
        for sc in &inst.scenarios {
            assert!(sc.h2.iter().all(|v| (-1.0..1.0).contains(v)));
        }
    }

    #[test]
    fn schur_detects_broken_first_stage() {
        let mut inst = generate(&GeneratorConfig::default()).unwrap();
        for i in 3..6 {
            inst.a[(i, i)] -= 10.0;
        }
        let rep = schur_check(&inst).unwrap();
        assert!(!rep.passed);
        assert!(rep.first_stage_margin < 0.0);
    }

    #[test]
    fn schur_requires_split() {
        let mut inst = generate(&GeneratorConfig::default()).unwrap();
        inst.meta.blocks = None;
        inst.meta.generator = None;
        assert!(matches!(schur_check(&inst), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&GeneratorConfig {
            alpha: 0.0,
            ..Default::default()
        })
        .is_err());
        assert!(generate(&GeneratorConfig {
            m2: 0,
            ..Default::default()
        })
        .is_err());
    }
}
