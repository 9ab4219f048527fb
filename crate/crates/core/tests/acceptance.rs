//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line each; exits nonzero if any fails.

use std::process::Command;
use std::time::{Duration, Instant};

use approx::relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svi2::boxvi::{self, BoxLvi};
use svi2::generator::{self, GeneratorConfig};
use svi2::model::{self, Scenario, TwoStageInstance};
use svi2::phm::{self, PhmOptions, PhmStatus};
use svi2::saa::{self, CellStatus, ExperimentConfig};
use svi2::second_stage::{self, Activity};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 box LVI solver matches enumeration", criterion_1),
        ("2 second-stage Jacobian matches finite differences", criterion_2),
        ("3 PHM matches the extensive form", criterion_3),
        ("4 PHM converges under default settings", criterion_4),
        ("5 out-of-sample residual shrinks with N", criterion_5),
        ("6 invariants hold", criterion_6),
        ("7 experiment output independent of thread count", criterion_7),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {name} ({secs:.2}s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.2}s): {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn clamp(v: f64, lo: f64, up: f64) -> f64 {
    v.max(lo).min(up)
}

// ---------------------------------------------------------------- criterion 1

fn random_pd_lvi(k: usize, rng: &mut ChaCha8Rng) -> BoxLvi {
    let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let w = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let h = g.transpose() * &g + (&w - w.transpose()) + DMatrix::identity(k, k) * 0.1;
    let q = DVector::from_fn(k, |_, _| rng.random_range(-3.0..3.0));
    let lower = DVector::from_fn(k, |_, _| rng.random_range(-2.0..0.0));
    let upper = DVector::from_fn(k, |i, _| lower[i] + rng.random_range(0.5..3.0));
    BoxLvi::new(h, q, lower, upper).unwrap()
}

/// Every point satisfying the KKT conditions of some active pattern.
fn enumerate_solutions(p: &BoxLvi) -> Vec<DVector<f64>> {
    let k = p.q.len();
    let mut found: Vec<DVector<f64>> = Vec::new();
    for code in 0..3usize.pow(k as u32) {
        // 0 lower, 1 free, 2 upper
        let pattern: Vec<usize> = (0..k).map(|i| code / 3usize.pow(i as u32) % 3).collect();
        let free: Vec<usize> = (0..k).filter(|&i| pattern[i] == 1).collect();
        let mut z = DVector::from_fn(k, |i, _| match pattern[i] {
            0 => p.lower[i],
            2 => p.upper[i],
            _ => 0.0,
        });
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| p.h[(free[a], free[b])]);
            let fixed_part = &p.h * &z + &p.q;
            let rhs = DVector::from_fn(free.len(), |a, _| -fixed_part[free[a]]);
            let Some(zf) = hff.lu().solve(&rhs) else { continue };
            for (a, &i) in free.iter().enumerate() {
                z[i] = zf[a];
            }
        }
        let g = &p.h * &z + &p.q;
        let ok = (0..k).all(|i| match pattern[i] {
            0 => g[i] >= -1e-9,
            2 => g[i] <= 1e-9,
            _ => z[i] >= p.lower[i] - 1e-9 && z[i] <= p.upper[i] + 1e-9,
        });
        if ok && !found.iter().any(|f| inf_norm(&(f - &z)) < 1e-7) {
            found.push(z);
        }
    }
    found
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut worst = 0.0f64;
    for t in 0..50 {
        let k = 2 + t % 5;
        let p = random_pd_lvi(k, &mut rng);
        let sol = boxvi::solve(&p, None, boxvi::DEFAULT_TOL, boxvi::DEFAULT_MAX_ITER);
        ensure(sol.converged(), || format!("instance {t}: status {:?}", sol.status))?;
        let bf = boxvi::brute_force(&p).map_err(|e| format!("instance {t}: {e}"))?;
        let oracle = enumerate_solutions(&p);
        ensure(oracle.len() == 1, || format!("instance {t}: oracle found {} solutions", oracle.len()))?;
        worst = worst.max(inf_norm(&(&sol.z - &bf))).max(inf_norm(&(&sol.z - &oracle[0])));
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-8, || format!("max deviation {worst:e} > 1e-8"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("50 instances, max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut collected = 0usize;
    let mut worst = 0.0f64;
    'seeds: for seed in 0..200u64 {
        let inst = generator::generate(&GeneratorConfig { seed, ..Default::default() }).map_err(|e| e.to_string())?;
        for sc in &inst.scenarios {
            let x = DVector::from_fn(inst.n(), |i, _| rng.random_range(inst.lower[i]..inst.upper[i]));
            let sol = second_stage::solve(sc, &x, 1e-12, 200).map_err(|e| e.to_string())?;
            // interior-generic: strictly complementary with something to differentiate
            if !sol.converged() || !sol.strictly_complementary() || !sol.active.contains(&Activity::Interior) {
                continue;
            }
            let jac = second_stage::jacobian(sc, &x, &sol).map_err(|e| e.to_string())?;
            let mut directions = 0;
            let mut attempts = 0;
            while directions < 5 && attempts < 50 {
                attempts += 1;
                let d = DVector::from_fn(inst.n(), |_, _| rng.random_range(-1.0..1.0)).normalize();
                let plus = second_stage::solve(sc, &(&x + &d * h), 1e-12, 200).map_err(|e| e.to_string())?;
                let minus = second_stage::solve(sc, &(&x - &d * h), 1e-12, 200).map_err(|e| e.to_string())?;
                if plus.active != sol.active || minus.active != sol.active {
                    continue;
                }
                let fd = (&plus.y - &minus.y) / (2.0 * h);
                let exact = &jac * &d;
                if exact.norm() == 0.0 {
                    continue;
                }
                let rel = (&exact - &fd).norm() / exact.norm();
                worst = worst.max(rel);
                directions += 1;
            }
            ensure(directions == 5, || "could not find pattern-preserving directions".into())?;
            collected += 1;
            if collected == 30 {
                break 'seeds;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(collected == 30, || format!("only {collected} interior-generic scenarios found"))?;
    ensure(worst <= 1e-5, || format!("max relative error {worst:e} > 1e-5"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("30 scenarios x 5 directions, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- criterion 3

/// `‖x − mid(x − (A x + h1 + Σ p_j B_j ŷ_j(x)), a, b)‖` with ŷ solved per scenario.
fn first_stage_natural_residual(inst: &TwoStageInstance, x: &DVector<f64>) -> Result<f64, String> {
    let mut g = &inst.a * x + &inst.h1;
    for sc in &inst.scenarios {
        let s = second_stage::solve(sc, x, 1e-12, 200).map_err(|e| e.to_string())?;
        g += &sc.b * &s.y * sc.weight;
    }
    let f = DVector::from_fn(x.len(), |i, _| x[i] - clamp(x[i] - g[i], inst.lower[i], inst.upper[i]));
    Ok(f.norm())
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let cfg = GeneratorConfig { seed, ..Default::default() };
        ensure(cfg.n() == 6 && cfg.m() == 10 && cfg.n_scenarios == 10, || "unexpected defaults".into())?;
        let inst = generator::generate(&cfg).map_err(|e| e.to_string())?;
        let ext = phm::solve_extensive(&inst, 1e-12, 500);
        ensure(ext.status == boxvi::SolveStatus::Converged, || format!("seed {seed}: extensive form {:?}", ext.status))?;
        let ext_res = first_stage_natural_residual(&inst, &ext.x)?;
        ensure(ext_res <= 1e-8, || format!("seed {seed}: extensive-form solution has residual {ext_res:e}"))?;
        let rep = phm::solve(&inst, &PhmOptions::default(), None).map_err(|e| e.to_string())?;
        ensure(rep.status == PhmStatus::Converged, || format!("seed {seed}: PHM {:?}", rep.status))?;
        let diff = (DVector::from_vec(rep.x.clone()) - &ext.x).norm();
        worst = worst.max(diff);
    }
    ensure(worst <= 1e-4, || format!("max ‖x_PHM − x_ext‖ = {worst:e} > 1e-4"))?;
    Ok(format!("10 instances, max ‖x_PHM − x_ext‖ = {worst:.2e}"))
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let mut summary = Vec::new();
    for n_scen in [10usize, 50] {
        let mut converged = 0;
        let mut max_iter = 0;
        for seed in 0..20 {
            let inst = generator::generate(&GeneratorConfig { seed, n_scenarios: n_scen, ..Default::default() })
                .map_err(|e| e.to_string())?;
            if let Ok(rep) = phm::solve(&inst, &PhmOptions::default(), None) {
                if rep.status == PhmStatus::Converged && rep.res <= 1e-5 {
                    converged += 1;
                    max_iter = max_iter.max(rep.iterations);
                }
            }
        }
        ensure(converged >= 19, || format!("N={n_scen}: only {converged}/20 converged"))?;
        summary.push(format!("N={n_scen}: {converged}/20 (max {max_iter} iterations)"));
    }
    Ok(summary.join(", "))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let cfg = ExperimentConfig {
        n_grid: vec![10, 50, 250],
        replications: 10,
        eval_scenarios: 500,
        ..Default::default()
    };
    let result = saa::run(&cfg).map_err(|e| e.to_string())?;
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let samples: Vec<f64> = result
            .cells
            .iter()
            .filter(|c| c.n == n && c.status == CellStatus::Converged)
            .filter_map(|c| c.out_of_sample_res)
            .collect();
        let count = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / count;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (count - 1.0);
        let st = &result.stats[k];
        ensure(st.n == n && relative_eq!(st.mean, mean, max_relative = 1e-12) && relative_eq!(st.variance, var, max_relative = 1e-12), || {
            format!("N={n}: reported stats disagree with the cells")
        })?;
        means.push(mean);
        vars.push(var);
    }
    ensure(means.windows(2).all(|w| w[1] < w[0]), || format!("means not strictly decreasing: {means:?}"))?;
    ensure(vars[2] < vars[0], || format!("var(250) = {} not below var(10) = {}", vars[2], vars[0]))?;
    Ok(format!(
        "means {:.4} > {:.4} > {:.4}, variance {:.2e} -> {:.2e}",
        means[0], means[1], means[2], vars[0], vars[2]
    ))
}

// ---------------------------------------------------------------- criterion 6

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off.sqrt() <= 1e-14 * a.norm() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

fn min_eig(a: DMatrix<f64>) -> f64 {
    jacobi_eigenvalues(a).into_iter().fold(f64::INFINITY, f64::min)
}

fn scenario_operator(inst: &TwoStageInstance, sc: &Scenario) -> DMatrix<f64> {
    let (n, m) = (inst.n(), sc.lower.len());
    DMatrix::from_fn(n + m, n + m, |i, j| match (i < n, j < n) {
        (true, true) => inst.a[(i, j)],
        (true, false) => sc.b[(i, j - n)],
        (false, true) => sc.l[(i - n, j)],
        (false, false) => sc.m[(i - n, j - n)],
    })
}

fn check_phm_invariants() -> Result<String, String> {
    let mut iterations = 0;
    for seed in 0..3 {
        let inst = generator::generate(&GeneratorConfig { seed, ..Default::default() }).map_err(|e| e.to_string())?;
        let opts = PhmOptions::default();
        let mut violation = None;
        let observe = |state: &phm::PhmState, _: &phm::HistoryRow| {
            let mut mean = DVector::zeros(inst.n());
            for (sc, w) in inst.scenarios.iter().zip(&state.w) {
                mean += w * sc.weight;
            }
            if inf_norm(&mean) > 1e-10 && violation.is_none() {
                violation = Some(format!("seed {seed} iteration {}: multiplier mean {:e}", state.nu, inf_norm(&mean)));
            }
            if state.x.iter().any(|x| x.as_slice() != state.x_bar.as_slice()) && violation.is_none() {
                violation = Some(format!("seed {seed} iteration {}: first-stage copies differ", state.nu));
            }
            iterations += 1;
        };
        phm::solve_with(&inst, &opts, None, observe).map_err(|e| e.to_string())?;
        if let Some(v) = violation {
            return Err(v);
        }
    }
    Ok(format!("{iterations} PHM iterations checked"))
}

fn check_mid_properties() -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let triple = (1usize..8).prop_flat_map(|k| {
        (
            prop::collection::vec(-100.0f64..100.0, k),
            prop::collection::vec(-100.0f64..100.0, k),
            prop::collection::vec(0.0f64..50.0, k),
            prop::collection::vec(-100.0f64..100.0, k),
        )
    });
    runner
        .run(&triple, |(v, lo, width, v2)| {
            let lo = DVector::from_vec(lo);
            let up = &lo + DVector::from_vec(width);
            let v = DVector::from_vec(v);
            let v2 = DVector::from_vec(v2);
            let p = model::mid(&v, &lo, &up).unwrap();
            let expected = DVector::from_fn(v.len(), |i, _| clamp(v[i], lo[i], up[i]));
            prop_assert_eq!(&p, &expected);
            prop_assert_eq!(&model::mid(&p, &lo, &up).unwrap(), &p);
            let p2 = model::mid(&v2, &lo, &up).unwrap();
            prop_assert!((&p - &p2).norm() <= (&v - &v2).norm() + 1e-12);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn criterion_6() -> Outcome {
    let phm_msg = check_phm_invariants()?;
    check_mid_properties()?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_margin_gap = 0.0f64;
    for seed in 0..20u64 {
        let alpha = [0.1, 1.0, 3.0][seed as usize % 3];
        let inst = generator::generate(&GeneratorConfig { seed, alpha, ..Default::default() }).map_err(|e| e.to_string())?;
        let cert = model::certify_strong_monotonicity(&inst).map_err(|e| e.to_string())?;
        ensure(cert.certified, || format!("seed {seed}: not certified"))?;
        let schur = generator::schur_check(&inst).map_err(|e| e.to_string())?;
        ensure(schur.passed, || format!("seed {seed}: Schur check failed"))?;

        let sym_a = &inst.a + inst.a.transpose();
        let sym_a_inv = sym_a.clone().try_inverse().ok_or("A + Aᵀ singular")?;
        for (j, sc) in inst.scenarios.iter().enumerate() {
            let c = &sc.b + sc.l.transpose();
            let margin = min_eig(&sc.m + sc.m.transpose() - c.transpose() * &sym_a_inv * &c);
            ensure(margin >= 2.0 * alpha - 1e-6, || format!("seed {seed} scenario {j}: margin {margin} < 2α"))?;
            let reported = schur.second_stage_margins[j];
            let gap = (margin - reported).abs() / margin.abs().max(1.0);
            worst_margin_gap = worst_margin_gap.max(gap);
            ensure(gap <= 1e-9, || format!("seed {seed} scenario {j}: margin {reported} vs oracle {margin}"))?;

            let g = scenario_operator(&inst, sc);
            let lam = min_eig(&g + g.transpose()) / 2.0;
            ensure(
                relative_eq!(lam, cert.min_eig_sym[j], max_relative = 1e-9, epsilon = 1e-12),
                || format!("seed {seed} scenario {j}: certificate {} vs oracle {lam}", cert.min_eig_sym[j]),
            )?;
            if j == 0 {
                for _ in 0..100 {
                    let dim = g.nrows();
                    let z1 = DVector::from_fn(dim, |_, _| rng.random_range(-10.0..10.0));
                    let z2 = DVector::from_fn(dim, |_, _| rng.random_range(-10.0..10.0));
                    let dz = &z1 - &z2;
                    let lhs = dz.dot(&(&g * &dz));
                    ensure(lhs >= lam * dz.norm_squared() * (1.0 - 1e-9), || {
                        format!("seed {seed}: monotonicity violated ({lhs} < {})", lam * dz.norm_squared())
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "{phm_msg}; mid properties on 1000 triples; 20 instances certified, margin agreement {worst_margin_gap:.1e}; 2000 monotonicity pairs"
    ))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |threads: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let out = dir.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_svi2"))
            .args(["experiment", "--n-grid", "10,50", "--replications", "4", "--eval-scenarios", "200", "--seed", "3"])
            .args(["--threads", threads, "--out"])
            .arg(&out)
            .stderr(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("--threads {threads} exited with {status}"))?;
        let stats = std::fs::read(out.join("stats.csv")).map_err(|e| e.to_string())?;
        let traj = std::fs::read(out.join("trajectories.csv")).map_err(|e| e.to_string())?;
        Ok((stats, traj))
    };
    let one = run("1")?;
    let four = run("4")?;
    ensure(one.0 == four.0, || "stats.csv differs between --threads 1 and 4".into())?;
    ensure(one.1 == four.1, || "trajectories.csv differs between --threads 1 and 4".into())?;
    Ok(format!("stats.csv identical ({} bytes) for --threads 1 and 4", one.0.len()))
}
