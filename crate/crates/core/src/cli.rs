//! The `svi2` command line tool.
//!
//! Exit codes: 0 success, 2 bad input or arguments, 3 iteration budget
//! exhausted, 4 numerical abort or failed oracle check, 5 instance not
//! certified strongly monotone.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::boxvi::{self, SolveStatus};
use crate::error::Error;
use crate::generator::{self, GeneratorConfig};
use crate::linalg;
use crate::model::{self, TwoStageInstance};
use crate::phm::{self, PhmOptions, PhmStatus};
use crate::saa::{self, ExperimentConfig};
use crate::second_stage;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_UNCERTIFIED: i32 = 5;

/// Largest `n + N m` for which oracle-check solves the extensive form.
pub const EXTENSIVE_MAX_DIM: usize = 200;
const ORACLE_BF_TOL: f64 = 1e-8;
const ORACLE_JAC_TOL: f64 = 1e-5;
const ORACLE_PHM_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "svi2", version, about = "Two-stage stochastic box VI toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (directory for `experiment`); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Outer tolerance on the first-stage residual [default: 1e-5].
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// PHM iteration budget [default: 5000].
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
    /// PHM penalty [default: 1.0].
    #[arg(long, global = true)]
    r: Option<f64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true, env = "SVI2_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded random instance as JSON.
    Generate(GenerateArgs),
    /// Solve the SAA problem of an instance by progressive hedging.
    Solve(SolveArgs),
    /// Certify strong monotonicity of an instance.
    Certify(InstanceArg),
    /// Run the sample-size sweep.
    Experiment(ExperimentArgs),
    /// Cross-check solvers against enumeration, finite differences and the extensive form.
    OracleCheck(InstanceArg),
}

#[derive(Args, Debug, Serialize)]
struct GenerateArgs {
    #[arg(long, default_value_t = 3)]
    n1: usize,
    #[arg(long, default_value_t = 3)]
    n2: usize,
    #[arg(long, default_value_t = 5)]
    m1: usize,
    #[arg(long, default_value_t = 5)]
    m2: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Number of scenarios N.
    #[arg(long, default_value_t = 10)]
    scenarios: usize,
}

#[derive(Args, Debug)]
struct InstanceArg {
    instance: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long = "res-every", default_value_t = 1)]
    res_every: usize,
    /// Also write the per-iteration history CSV here.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Also run the oracle checks and embed them in the report.
    #[arg(long = "oracle-check")]
    oracle_check: bool,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// JSON experiment configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long = "eval-scenarios")]
    eval_scenarios: Option<usize>,
    /// Comma-separated sample sizes.
    #[arg(long = "n-grid", value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
}

/// Parses `args` (including the program name) and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
        }
    };
    let common = cli.common.clone();
    if let Some(tol) = common.tol {
        if !(tol > 0.0) {
            eprintln!("error: --tol must be positive");
            return EXIT_INPUT;
        }
    }
    if common.max_iter == Some(0) {
        eprintln!("error: --max-iter must be at least 1");
        return EXIT_INPUT;
    }
    let threads = common.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_NUMERIC;
        }
    };
    let effective_threads = pool.current_num_threads();
    pool.install(|| match cli.command {
        Command::Generate(args) => cmd_generate(&common, &args),
        Command::Solve(args) => cmd_solve(&common, &args),
        Command::Certify(args) => cmd_certify(&common, &args.instance),
        Command::Experiment(args) => cmd_experiment(&common, &args, effective_threads),
        Command::OracleCheck(args) => cmd_oracle_check(&common, &args.instance),
    })
}

fn phm_options(common: &Common) -> PhmOptions {
    let d = PhmOptions::default();
    PhmOptions {
        r: common.r.unwrap_or(d.r),
        tol: common.tol.unwrap_or(d.tol),
        max_iter: common.max_iter.unwrap_or(d.max_iter),
        ..d
    }
}

fn load(path: &Path) -> Result<TwoStageInstance, i32> {
    TwoStageInstance::load(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_INPUT
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), i32> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| {
            eprintln!("error: cannot write {}: {e}", path.display());
            EXIT_INPUT
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|_| EXIT_INPUT)
        }
    }
}

fn to_json_text<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialization");
    s.push('\n');
    s
}

fn envelope(command: &str, config: serde_json::Value, body: serde_json::Value) -> serde_json::Value {
    let mut doc = json!({
        "tool": "svi2",
        "version": crate::VERSION,
        "command": command,
        "config": config,
    });
    if let (Some(doc), serde_json::Value::Object(body)) = (doc.as_object_mut(), body) {
        doc.extend(body);
    }
    doc
}

fn cmd_generate(common: &Common, args: &GenerateArgs) -> i32 {
    if common.format == Format::Csv {
        eprintln!("error: generate only writes json");
        return EXIT_INPUT;
    }
    let cfg = GeneratorConfig {
        n1: args.n1,
        n2: args.n2,
        m1: args.m1,
        m2: args.m2,
        alpha: args.alpha,
        n_scenarios: args.scenarios,
        seed: common.seed.unwrap_or(0),
    };
    let inst = match generator::generate(&cfg) {
        Ok(i) => i,
        Err(e @ Error::InvalidArgument(_)) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_NUMERIC;
        }
    };
    let text = match inst.to_json() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_NUMERIC;
        }
    };
    match emit(common.out.as_deref(), &text) {
        Ok(()) => EXIT_OK,
        Err(code) => code,
    }
}

fn write_history(path: Option<&Path>, history: &[phm::HistoryRow], n: usize, opts: &PhmOptions) -> Result<(), i32> {
    let mut buf = format!("# svi2 {} options={}\n", crate::VERSION, serde_json::to_string(opts).unwrap_or_default()).into_bytes();
    if let Err(e) = phm::write_history_csv(&mut buf, history, n) {
        eprintln!("error: {e}");
        return Err(EXIT_NUMERIC);
    }
    emit(path, &String::from_utf8_lossy(&buf))
}

fn cmd_solve(common: &Common, args: &SolveArgs) -> i32 {
    let inst = match load(&args.instance) {
        Ok(i) => i,
        Err(code) => return code,
    };
    let opts = PhmOptions {
        res_every: args.res_every,
        ..phm_options(common)
    };
    if let Err(e) = opts.validate() {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    let certified = match model::certify_strong_monotonicity(&inst) {
        Ok(c) => {
            if !c.certified {
                eprintln!(
                    "warning: instance is not certified strongly monotone (min eigenvalue {:e}); PHM may not converge",
                    c.min_eig_sym.iter().copied().fold(f64::INFINITY, f64::min)
                );
            }
            Some(c.certified)
        }
        Err(e) => {
            eprintln!("warning: certification failed: {e}");
            None
        }
    };

    let config = json!({
        "instance": args.instance.display().to_string(),
        "phm": &opts,
        "threads": rayon::current_num_threads(),
    });
    let oracle = args.oracle_check.then(|| oracle_check(&inst, &opts, common.seed.unwrap_or(0)));
    match phm::solve(&inst, &opts, None) {
        Ok(report) => {
            if let Some(h) = &args.history {
                if let Err(code) = write_history(Some(h), &report.history, inst.n(), &opts) {
                    return code;
                }
            }
            let written = match common.format {
                Format::Json => emit(
                    common.out.as_deref(),
                    &to_json_text(&envelope("solve", config, json!({ "certified": certified, "report": &report, "oracle_check": &oracle }))),
                ),
                Format::Csv => write_history(common.out.as_deref(), &report.history, inst.n(), &opts),
            };
            if let Err(code) = written {
                return code;
            }
            eprintln!(
                "{:?} after {} iterations, res = {:e}",
                report.status, report.iterations, report.res
            );
            if let Some(o) = &oracle {
                for c in o.checks.iter().filter(|c| c.status == CheckStatus::Fail) {
                    eprintln!("oracle check {} failed: {}", c.name, c.detail);
                }
            }
            match report.status {
                PhmStatus::Converged if oracle.as_ref().is_some_and(|o| !o.passed()) => EXIT_NUMERIC,
                PhmStatus::Converged => EXIT_OK,
                PhmStatus::MaxIter => EXIT_BUDGET,
            }
        }
        Err(abort) => {
            eprintln!("error: {abort}");
            if let Some(h) = &args.history {
                let _ = write_history(Some(h), &abort.history, inst.n(), &opts);
            }
            if common.format == Format::Json {
                let _ = emit(
                    common.out.as_deref(),
                    &to_json_text(&envelope(
                        "solve",
                        config,
                        json!({ "error": abort.error.to_string(), "history": &abort.history }),
                    )),
                );
            }
            match abort.error {
                Error::InvalidArgument(_) => EXIT_INPUT,
                _ => EXIT_NUMERIC,
            }
        }
    }
}

fn cmd_certify(common: &Common, path: &Path) -> i32 {
    let inst = match load(path) {
        Ok(i) => i,
        Err(code) => return code,
    };
    let cert = match model::certify_strong_monotonicity(&inst) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_NUMERIC;
        }
    };
    let schur = match generator::schur_check(&inst) {
        Ok(s) => Some(s),
        Err(Error::InvalidArgument(_)) => None,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_NUMERIC;
        }
    };
    let text = match common.format {
        Format::Json => to_json_text(&envelope(
            "certify",
            json!({ "instance": path.display().to_string() }),
            json!({ "certificate": &cert, "schur": &schur }),
        )),
        Format::Csv => {
            let mut s = format!("# svi2 {}\nscenario,min_eig_sym\n", crate::VERSION);
            for (j, v) in cert.min_eig_sym.iter().enumerate() {
                s.push_str(&format!("{j},{v}\n"));
            }
            s
        }
    };
    if let Err(code) = emit(common.out.as_deref(), &text) {
        return code;
    }
    eprintln!("kappa = {:e}, certified = {}", cert.kappa, cert.certified);
    if cert.certified {
        EXIT_OK
    } else {
        EXIT_UNCERTIFIED
    }
}

fn cmd_experiment(common: &Common, args: &ExperimentArgs, threads: usize) -> i32 {
    let mut cfg = match &args.config {
        Some(path) => {
            let parsed = std::fs::read_to_string(path)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<ExperimentConfig>(&t).map_err(|e| e.to_string()));
            match parsed {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return EXIT_INPUT;
                }
            }
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = common.r {
        cfg.phm.r = r;
    }
    if let Some(t) = common.tol {
        cfg.phm.tol = t;
    }
    if let Some(m) = common.max_iter {
        cfg.phm.max_iter = m;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(e) = args.eval_scenarios {
        cfg.eval_scenarios = e;
    }
    if let Some(g) = &args.n_grid {
        cfg.n_grid = g.clone();
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("experiment"));
    let start = Instant::now();
    let result = match saa::run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_NUMERIC;
        }
    };
    let wall = start.elapsed().as_secs_f64();
    if let Err(e) = saa::write_outputs(&dir, &cfg, &result, threads, wall) {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    for s in &result.stats {
        eprintln!(
            "N={:>5}  mean={:.5}  var={:.5}  CI=[{:.4}, {:.4}]  failures={}",
            s.n, s.mean, s.variance, s.ci_lo, s.ci_hi, s.failures
        );
    }
    EXIT_OK
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub error: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl Check {
    fn measured(name: &'static str, error: f64, tolerance: f64, detail: String) -> Self {
        Check {
            name,
            status: if error <= tolerance { CheckStatus::Pass } else { CheckStatus::Fail },
            error: Some(error),
            tolerance: Some(tolerance),
            detail,
        }
    }

    fn failed(name: &'static str, detail: String) -> Self {
        Check {
            name,
            status: CheckStatus::Fail,
            error: None,
            tolerance: None,
            detail,
        }
    }

    fn skipped(name: &'static str, detail: String) -> Self {
        Check {
            name,
            status: CheckStatus::Skipped,
            error: None,
            tolerance: None,
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub checks: Vec<Check>,
    pub x_phm: Option<Vec<f64>>,
    pub x_ext: Option<Vec<f64>>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

fn midpoint(inst: &TwoStageInstance) -> DVector<f64> {
    (&inst.lower + &inst.upper) * 0.5
}

/// Runs every oracle comparison that fits the instance size.
pub fn oracle_check(inst: &TwoStageInstance, opts: &PhmOptions, seed: u64) -> OracleReport {
    let mut checks = Vec::new();
    let (n, m, count) = (inst.n(), inst.m(), inst.n_scenarios());
    let x_mid = midpoint(inst);

    checks.push(match model::certify_strong_monotonicity(inst) {
        Ok(c) if c.certified => Check::measured("model.strong_monotonicity", 0.0, 0.0, format!("kappa = {:e}", c.kappa)),
        Ok(c) => Check::failed(
            "model.strong_monotonicity",
            format!(
                "not certified: min eigenvalue {:e}",
                c.min_eig_sym.iter().copied().fold(f64::INFINITY, f64::min)
            ),
        ),
        Err(e) => Check::failed("model.strong_monotonicity", e.to_string()),
    });

    const BF_SECOND: &str = "boxvi.second_stage_vs_brute_force";
    checks.push(if m > boxvi::BRUTE_FORCE_MAX_DIM {
        Check::skipped(BF_SECOND, format!("m = {m} exceeds enumeration limit {}", boxvi::BRUTE_FORCE_MAX_DIM))
    } else {
        let mut worst = 0.0f64;
        let mut failure = None;
        for (j, sc) in inst.scenarios.iter().enumerate() {
            let outcome = second_stage::lvi(sc, &x_mid).and_then(|p| {
                let s = boxvi::solve(&p, None, boxvi::DEFAULT_TOL, boxvi::DEFAULT_MAX_ITER);
                if s.status != SolveStatus::Converged {
                    return Err(Error::InnerSolve {
                        scenario: j,
                        status: s.status,
                        residual: s.residual,
                    });
                }
                Ok(linalg::inf_norm(&(s.z - boxvi::brute_force(&p)?)))
            });
            match outcome {
                Ok(e) => worst = worst.max(e),
                Err(e) => {
                    failure = Some(format!("scenario {j}: {e}"));
                    break;
                }
            }
        }
        match failure {
            Some(msg) => Check::failed(BF_SECOND, msg),
            None => Check::measured(BF_SECOND, worst, ORACLE_BF_TOL, format!("{count} scenarios at the box midpoint")),
        }
    });

    const BF_PHM: &str = "boxvi.phm_subproblem_vs_brute_force";
    checks.push(if n + m > boxvi::BRUTE_FORCE_MAX_DIM {
        Check::skipped(BF_PHM, format!("n + m = {} exceeds enumeration limit", n + m))
    } else {
        match phm::init(inst, opts.r, &x_mid) {
            Ok(state) => {
                let mut worst = 0.0f64;
                let mut failure = None;
                for j in 0..count {
                    let p = phm::scenario_lvi(inst, &state, j);
                    let s = boxvi::solve(&p, None, boxvi::DEFAULT_TOL, boxvi::DEFAULT_MAX_ITER);
                    match boxvi::brute_force(&p) {
                        Ok(z) if s.converged() => worst = worst.max(linalg::inf_norm(&(s.z - z))),
                        Ok(_) => {
                            failure = Some(format!("scenario {j}: solver status {:?}", s.status));
                            break;
                        }
                        Err(e) => {
                            failure = Some(format!("scenario {j}: {e}"));
                            break;
                        }
                    }
                }
                match failure {
                    Some(msg) => Check::failed(BF_PHM, msg),
                    None => Check::measured(BF_PHM, worst, ORACLE_BF_TOL, format!("{count} first-iteration subproblems")),
                }
            }
            Err(e) => Check::failed(BF_PHM, e.to_string()),
        }
    });

    checks.push(jacobian_check(inst, seed));

    const EXT: &str = "phm.vs_extensive_form";
    let ext_dim = n + count * m;
    let (mut x_phm, mut x_ext) = (None, None);
    checks.push(if ext_dim > EXTENSIVE_MAX_DIM {
        Check::skipped(EXT, format!("extensive form dimension {ext_dim} exceeds {EXTENSIVE_MAX_DIM}"))
    } else {
        let ext = phm::solve_extensive(inst, 1e-12, 500);
        match (ext.status, phm::solve(inst, opts, None)) {
            (SolveStatus::Converged, Ok(rep)) if rep.status == PhmStatus::Converged => {
                let err = rep
                    .x
                    .iter()
                    .zip(ext.x.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                x_phm = Some(rep.x.clone());
                x_ext = Some(ext.x.as_slice().to_vec());
                Check::measured(EXT, err, ORACLE_PHM_TOL, format!("PHM converged in {} iterations", rep.iterations))
            }
            (SolveStatus::Converged, Ok(rep)) => Check::failed(EXT, format!("PHM ended with {:?}", rep.status)),
            (SolveStatus::Converged, Err(abort)) => Check::failed(EXT, abort.to_string()),
            (status, _) => Check::failed(EXT, format!("extensive-form solve ended with {status:?}")),
        }
    });

    OracleReport { checks, x_phm, x_ext }
}

fn jacobian_check(inst: &TwoStageInstance, seed: u64) -> Check {
    const NAME: &str = "second_stage.jacobian_vs_finite_difference";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = inst.n();
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    let mut nontrivial = 0usize;
    for (j, sc) in inst.scenarios.iter().enumerate() {
        let x = DVector::from_fn(n, |i, _| rng.random_range(inst.lower[i]..inst.upper[i]));
        let sol = match second_stage::solve(sc, &x, boxvi::DEFAULT_TOL, boxvi::DEFAULT_MAX_ITER) {
            Ok(s) if s.converged() => s,
            Ok(s) => return Check::failed(NAME, format!("scenario {j}: solver status {:?}", s.status)),
            Err(e) => return Check::failed(NAME, format!("scenario {j}: {e}")),
        };
        if !sol.strictly_complementary() {
            continue;
        }
        let jac = match second_stage::jacobian(sc, &x, &sol) {
            Ok(jm) => jm,
            Err(e) => return Check::failed(NAME, format!("scenario {j}: {e}")),
        };
        for _ in 0..3 {
            let d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
            match second_stage::central_difference(sc, &x, &d, FD_STEP) {
                Ok(Some(fd)) => {
                    worst = worst.max(relative_error(&(&jac * &d), &fd));
                    compared += 1;
                    nontrivial += usize::from(fd.norm() > 0.0);
                }
                Ok(None) => {}
                Err(e) => return Check::failed(NAME, format!("scenario {j}: {e}")),
            }
        }
    }
    if compared == 0 {
        Check::skipped(NAME, "no strictly complementary sample point".into())
    } else {
        Check::measured(NAME, worst, ORACLE_JAC_TOL, format!("{compared} directional derivatives, {nontrivial} nonzero"))
    }
}

/// `‖a − b‖ / max(‖b‖, 1e-12)`; exact zeros on both sides give 0.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / b.norm().max(1e-12)
    }
}

fn cmd_oracle_check(common: &Common, path: &Path) -> i32 {
    let inst = match load(path) {
        Ok(i) => i,
        Err(code) => return code,
    };
    let opts = phm_options(common);
    if let Err(e) = opts.validate() {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    let report = oracle_check(&inst, &opts, common.seed.unwrap_or(0));
    for c in &report.checks {
        eprintln!(
            "{:<8} {:<45} error={} tol={}  {}",
            format!("{:?}", c.status).to_uppercase(),
            c.name,
            c.error.map_or("-".into(), |e| format!("{e:.3e}")),
            c.tolerance.map_or("-".into(), |t| format!("{t:.0e}")),
            c.detail
        );
    }
    let text = match common.format {
        Format::Json => to_json_text(&envelope(
            "oracle-check",
            json!({ "instance": path.display().to_string(), "phm": &opts, "seed": common.seed.unwrap_or(0) }),
            json!({ "passed": report.passed(), "checks": &report.checks, "x_phm": &report.x_phm, "x_ext": &report.x_ext }),
        )),
        Format::Csv => {
            let mut s = format!("# svi2 {}\ncheck,status,error,tolerance,detail\n", crate::VERSION);
            for c in &report.checks {
                s.push_str(&format!(
                    "{},{:?},{},{},\"{}\"\n",
                    c.name,
                    c.status,
                    c.error.map_or(String::new(), |e| e.to_string()),
                    c.tolerance.map_or(String::new(), |t| t.to_string()),
                    c.detail.replace('"', "'")
                ));
            }
            s
        }
    };
    if let Err(code) = emit(common.out.as_deref(), &text) {
        return code;
    }
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    #[test]
    fn relative_error_cases() {
        let z = DVector::zeros(2);
        assert_eq!(relative_error(&z, &z), 0.0);
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 0.0]);
        assert_eq!(relative_error(&a, &b), 0.5);
        assert_eq!(relative_error(&a, &z), 1e12);
    }

    #[test]
    fn oracle_check_on_identity_instance() {
        let inst = fixtures::identity(2, 2, 3);
        let report = oracle_check(&inst, &PhmOptions::default(), 0);
        assert!(report.passed());
        let names: Vec<_> = report.checks.iter().map(|c| c.name).collect();
        assert_eq!(names[0], "model.strong_monotonicity");
        assert_eq!(report.x_ext.as_ref().map(Vec::len), Some(2));
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = Cli::try_parse_from(["svi2", "solve", "i.json", "--tol", "1e-6", "--r", "2", "--format", "csv"]).unwrap();
        let opts = phm_options(&cli.common);
        assert_eq!((opts.tol, opts.r, opts.max_iter), (1e-6, 2.0, 5000));
        assert_eq!(cli.common.format, Format::Csv);
    }
}
