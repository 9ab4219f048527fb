//! Sample-size sweep for the SAA estimator.
//!
//! For every replication a fresh test problem (structural matrices, bounds,
//! `h1`) is drawn. For every sample size `N` of the grid an independent set of
//! `N` scenarios is drawn and the SAA problem is solved by progressive hedging.
//! The resulting first-stage point is scored by the natural-map residual
//! against a separate evaluation sample of the same test problem. Per-`N`
//! mean, variance and a normal-approximation 95% interval summarize the scores.
//!
//! Seeds: replication `k` draws its structure from `derive_seed(seed, [0, k])`,
//! the training sample of size `N` from `derive_seed(seed, [1, k, N])` and the
//! evaluation sample from `derive_seed(seed, [2, k])`.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, Structure};
use crate::model::{natural_map_norm, TwoStageInstance};
use crate::phm::{self, PhmOptions, PhmStatus};
use crate::second_stage;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Structural dimensions and α; its `seed` and `n_scenarios` are unused here.
    pub base: GeneratorConfig,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub eval_scenarios: usize,
    pub phm: PhmOptions,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            base: GeneratorConfig::default(),
            n_grid: vec![10, 50, 250, 1250, 2250],
            replications: 20,
            eval_scenarios: 3000,
            phm: PhmOptions::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.phm.validate()?;
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::invalid("n_grid must be nonempty with positive sizes"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_grid must be strictly increasing"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.eval_scenarios == 0 {
            return Err(Error::invalid("eval_scenarios must be at least 1"));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer folded over `parts`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellStatus {
    Converged,
    MaxIter,
    Aborted,
}

/// One (replication, N) solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub replication: usize,
    pub n: usize,
    pub status: CellStatus,
    pub iterations: usize,
    pub in_sample_res: f64,
    /// `None` when the cell failed or its evaluation did.
    pub out_of_sample_res: Option<f64>,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Cells excluded from the statistics.
    pub failures: usize,
}

impl ResStats {
    /// Sample mean, unbiased sample variance and `mean ± 1.96 sqrt(var / count)`.
    pub fn from_samples(n: usize, samples: &[f64], failures: usize) -> Self {
        let count = samples.len();
        if count == 0 {
            return ResStats {
                n,
                mean: f64::NAN,
                variance: f64::NAN,
                ci_lo: f64::NAN,
                ci_hi: f64::NAN,
                failures,
            };
        }
        let mean = samples.iter().sum::<f64>() / count as f64;
        let variance = if count > 1 {
            samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        let half = Z95 * (variance / count as f64).sqrt();
        ResStats {
            n,
            mean,
            variance,
            ci_lo: mean - half,
            ci_hi: mean + half,
            failures,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub stats: Vec<ResStats>,
    pub cells: Vec<Cell>,
}

/// Out-of-sample residual of `x` against the scenarios of `eval`.
///
/// Second stages are solved at `x` for every evaluation scenario; the weighted
/// contributions `p_j B_j ŷ_j` are summed per component in sorted order, so the
/// value is independent of the order of the evaluation set.
pub fn out_of_sample_res(eval: &TwoStageInstance, x: &DVector<f64>, opts: &PhmOptions) -> Result<f64> {
    if x.len() != eval.n() {
        return Err(Error::invalid(format!("x has length {}, expected {}", x.len(), eval.n())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("x has non-finite entries"));
    }
    let contributions = eval
        .scenarios
        .par_iter()
        .enumerate()
        .map(|(j, sc)| {
            let s = second_stage::solve(sc, x, opts.inner_tol, opts.inner_max_iter)?;
            if !s.converged() {
                return Err(Error::InnerSolve {
                    scenario: j,
                    status: s.status,
                    residual: s.residual,
                });
            }
            Ok(&sc.b * &s.y * sc.weight)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = eval.n();
    let mut expectation = DVector::zeros(n);
    let mut column = Vec::with_capacity(contributions.len());
    for i in 0..n {
        column.clear();
        column.extend(contributions.iter().map(|c| c[i]));
        column.sort_by(f64::total_cmp);
        expectation[i] = column.iter().sum();
    }
    let g = &eval.a * x + &eval.h1 + expectation;
    Ok(natural_map_norm(x, &g, &eval.lower, &eval.upper))
}

fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Runs the full sweep. Replications and grid cells are independent; every
/// aggregation runs in (replication, grid) order.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let per_rep = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<Cell> = per_rep.into_iter().flatten().collect();
    let stats = cfg
        .n_grid
        .iter()
        .map(|&n| {
            let mut samples = Vec::new();
            let mut failures = 0;
            for c in cells.iter().filter(|c| c.n == n) {
                match (c.status, c.out_of_sample_res) {
                    (CellStatus::Converged, Some(v)) => samples.push(v),
                    _ => failures += 1,
                }
            }
            ResStats::from_samples(n, &samples, failures)
        })
        .collect();
    Ok(ExperimentResult { stats, cells })
}

fn run_replication(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<Cell>> {
    let rep_id = rep as u64;
    let structure = Structure::draw(&cfg.base, &mut rng_for(cfg.seed, &[0, rep_id]))?;
    let eval_scenarios = structure.sample_scenarios(&mut rng_for(cfg.seed, &[2, rep_id]), cfg.eval_scenarios)?;
    let eval = structure.instance(eval_scenarios, None)?;

    cfg.n_grid
        .par_iter()
        .map(|&n| {
            let scenarios = structure.sample_scenarios(&mut rng_for(cfg.seed, &[1, rep_id, n as u64]), n)?;
            let inst = structure.instance(scenarios, None)?;
            let cell = match phm::solve(&inst, &cfg.phm, None) {
                Ok(report) => {
                    let x = DVector::from_column_slice(&report.x);
                    let status = match report.status {
                        PhmStatus::Converged => CellStatus::Converged,
                        PhmStatus::MaxIter => CellStatus::MaxIter,
                    };
                    let oos = if status == CellStatus::Converged {
                        out_of_sample_res(&eval, &x, &cfg.phm).ok()
                    } else {
                        None
                    };
                    Cell {
                        replication: rep,
                        n,
                        status,
                        iterations: report.iterations,
                        in_sample_res: report.res,
                        out_of_sample_res: oos,
                        x: report.x,
                    }
                }
                Err(abort) => Cell {
                    replication: rep,
                    n,
                    status: CellStatus::Aborted,
                    iterations: abort.history.len(),
                    in_sample_res: f64::NAN,
                    out_of_sample_res: None,
                    x: abort.history.last().map(|h| h.x_bar.clone()).unwrap_or_default(),
                },
            };
            Ok(cell)
        })
        .collect()
}

fn csv_header_comment(cfg: &ExperimentConfig) -> Result<String> {
    Ok(format!("# svi2 {} config={}\n", crate::VERSION, serde_json::to_string(cfg)?))
}

/// `N,mean,variance,ci_lo,ci_hi,failures`, preceded by a `#` comment line with
/// the tool version and configuration.
pub fn write_stats_csv<W: Write>(mut out: W, cfg: &ExperimentConfig, stats: &[ResStats]) -> Result<()> {
    out.write_all(csv_header_comment(cfg)?.as_bytes())
        .map_err(|source| Error::Io {
            path: "stats.csv".into(),
            source,
        })?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["N", "mean", "variance", "ci_lo", "ci_hi", "failures"])?;
    for s in stats {
        wtr.write_record([
            s.n.to_string(),
            s.mean.to_string(),
            s.variance.to_string(),
            s.ci_lo.to_string(),
            s.ci_hi.to_string(),
            s.failures.to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "stats.csv".into(),
        source,
    })
}

/// `replication,N,component_index,value`, one row per first-stage component per cell.
pub fn write_trajectories_csv<W: Write>(mut out: W, cfg: &ExperimentConfig, cells: &[Cell]) -> Result<()> {
    out.write_all(csv_header_comment(cfg)?.as_bytes())
        .map_err(|source| Error::Io {
            path: "trajectories.csv".into(),
            source,
        })?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["replication", "N", "component_index", "value"])?;
    for c in cells {
        for (i, v) in c.x.iter().enumerate() {
            wtr.write_record([c.replication.to_string(), c.n.to_string(), i.to_string(), v.to_string()])?;
        }
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "trajectories.csv".into(),
        source,
    })
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    threads: usize,
    wall_time_secs: f64,
    x0: &'static str,
    training_samples: &'static str,
    structure_per_replication: bool,
    seeds: Vec<ReplicationSeeds>,
    cells: &'a [Cell],
}

#[derive(Serialize)]
struct ReplicationSeeds {
    replication: usize,
    structure: u64,
    eval: u64,
    training: Vec<(usize, u64)>,
}

/// Writes `stats.csv`, `trajectories.csv` and `metadata.json` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, result: &ExperimentResult, threads: usize, wall_time_secs: f64) -> Result<()> {
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| Error::Io { path: p, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;

    let path = dir.join("stats.csv");
    let f = std::fs::File::create(&path).map_err(io(&path))?;
    write_stats_csv(std::io::BufWriter::new(f), cfg, &result.stats)?;

    let path = dir.join("trajectories.csv");
    let f = std::fs::File::create(&path).map_err(io(&path))?;
    write_trajectories_csv(std::io::BufWriter::new(f), cfg, &result.cells)?;

    let seeds = (0..cfg.replications)
        .map(|k| ReplicationSeeds {
            replication: k,
            structure: derive_seed(cfg.seed, &[0, k as u64]),
            eval: derive_seed(cfg.seed, &[2, k as u64]),
            training: cfg
                .n_grid
                .iter()
                .map(|&n| (n, derive_seed(cfg.seed, &[1, k as u64, n as u64])))
                .collect(),
        })
        .collect();
    let meta = Metadata {
        tool: "svi2",
        version: crate::VERSION,
        config: cfg,
        threads,
        wall_time_secs,
        x0: "mid(0, a, b)",
        training_samples: "independent per sample size (not nested)",
        structure_per_replication: true,
        seeds,
        cells: &result.cells,
    };
    let path = dir.join("metadata.json");
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(io(&path))?;
    Ok(())
}
