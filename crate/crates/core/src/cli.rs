//! Command-line front end: simulate, analyze, filter, factorize, bench.
//!
//! Exit codes: 0 success (analyze: stable), 1 usage/input error,
//! 2 analyze verdict unstable, 3 analyze verdict marginal,
//! 4 filter engine not applicable to the system.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::factorization::{estimate_via_outer_with, inner_outer_with, DEFAULT_GRID};
use crate::io;
use crate::linalg::{Mat, Vector};
use crate::model::{simulate_with_input, LinearSystem};
use crate::montecarlo::{covariance_consistency, MonteCarloConfig};
use crate::par;
use crate::singular_kf::{run_akf, DEFAULT_PSEUDO_VARIANCE};
use crate::sise::{run_filter, Estimates, FilterInit, RunOptions, Variant};
use crate::stability::{verdict_with, RdeOptions, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNSTABLE: i32 = 2;
pub const EXIT_MARGINAL: i32 = 3;
pub const EXIT_NOT_APPLICABLE: i32 = 4;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "SISELAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "siselab", version, about = "Simultaneous input and state estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a system and write a trajectory CSV.
    Simulate(SimulateArgs),
    /// Decide whether SISE is stable for a system; writes a JSON report.
    Analyze(AnalyzeArgs),
    /// Run an estimator over a measurement CSV; writes an estimates CSV.
    Filter(FilterArgs),
    /// Inner-outer factorization of a square system.
    Factorize(FactorizeArgs),
    /// Time a suite of cases and check Monte Carlo covariance consistency.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// System JSON with keys A, G, C, H, Q, R (optional B, D)
    #[arg(long)]
    pub system: PathBuf,
    /// Number of steps after t = 0; defaults to the disturbance length minus one, or 100.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV with columns d_1..d_m (and u_1..u_q for systems with a known input).
    #[arg(long)]
    pub disturbance: Option<PathBuf>,
    /// Simulate without process and measurement noise.
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// System JSON with keys A, G, C, H, Q, R (optional B, D)
    #[arg(long)]
    pub system: PathBuf,
    /// Relative convergence tolerance of the Riccati iteration.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Sise,
    Akf,
    OuterPipeline,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// System JSON with keys A, G, C, H, Q, R (optional B, D)
    #[arg(long)]
    pub system: PathBuf,
    /// CSV with columns y_1..y_p (and u_1..u_q for systems with a known input).
    #[arg(long)]
    pub measurements: PathBuf,
    /// `outer-pipeline` handles square plants whose SISE is unstable
    #[arg(long, value_enum, default_value_t = Engine::Sise)]
    pub engine: Engine,
    /// Disturbance variance of the augmented Kalman filter.
    #[arg(long, default_value_t = DEFAULT_PSEUDO_VARIANCE)]
    pub pseudo_variance: f64,
    /// Relative convergence tolerance of the Riccati iteration.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Use only the first N+1 measurement rows.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Run SISE even when the analysis predicts divergence.
    #[arg(long)]
    pub force: bool,
    /// Estimates CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON (stderr when absent).
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Per-step gains as JSON lines (SISE engine only).
    #[arg(long)]
    pub gains: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    /// System JSON with keys A, G, C, H, Q, R (optional B, D)
    #[arg(long)]
    pub system: PathBuf,
    /// Relative convergence tolerance of the Riccati iteration.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Unit-circle grid size of the diagnostics.
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    /// Output directory for outer.json, inner.json and diagnostics.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Suite JSON: `{"cases": [{"name", "system", "horizon", "runs", "mc_horizon", "seed"}]}`.
    #[arg(long)]
    pub suite: PathBuf,
    /// Table CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Some(t),
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return EXIT_ERROR;
            }
        },
        Err(_) => None,
    };
    par::with_thread_cap(threads, || dispatch(cli.command))
}

fn dispatch(cmd: Command) -> i32 {
    let outcome = match cmd {
        Command::Simulate(a) => cmd_simulate(&a).map(|_| EXIT_OK),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Filter(a) => cmd_filter(&a),
        Command::Factorize(a) => match cmd_factorize(&a) {
            Err(e) if not_applicable(&e) => {
                eprintln!("error: factorization not applicable: {e}");
                Ok(EXIT_NOT_APPLICABLE)
            }
            r => r.map(|_| EXIT_OK),
        },
        Command::Bench(a) => cmd_bench(&a).map(|_| EXIT_OK),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol > 0.0 && tol < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("--tol must lie in (0, 1), got {tol}")))
    }
}

fn rde_options(tol: f64) -> RdeOptions {
    RdeOptions {
        tol,
        ..RdeOptions::default()
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn check_width(what: &str, rows: &[Vector], width: usize) -> Result<()> {
    match rows.first() {
        Some(r) if r.len() != width => Err(Error::Shape(format!(
            "{what} has {} columns, system expects {width}",
            r.len()
        ))),
        _ => Ok(()),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let sys = io::read_system(&args.system)?;
    let (d, u) = match &args.disturbance {
        Some(path) => {
            let cols = io::read_columns_file(path)?;
            let d = cols.series("d")?;
            check_width("disturbance", &d, sys.m())?;
            let u = if sys.known.is_some() {
                let u = cols.series("u")?;
                check_width("known input", &u, sys.known_dim())?;
                Some(u)
            } else {
                None
            };
            (d, u)
        }
        None => (Vec::new(), None),
    };
    let horizon = match args.horizon {
        Some(h) => h,
        None if !d.is_empty() => d.len() - 1,
        None => 100,
    };
    if horizon == 0 {
        return Err(Error::InvalidArgument("--horizon must be at least 1".into()));
    }
    if !d.is_empty() && d.len() < horizon {
        return Err(Error::InvalidArgument(format!(
            "disturbance has {} rows, horizon {horizon} needs at least {horizon}",
            d.len()
        )));
    }
    let d = if d.is_empty() {
        vec![Vector::zeros(sys.m()); horizon + 1]
    } else {
        d
    };
    let u = match (u, &sys.known) {
        (Some(u), _) => Some(u),
        (None, Some((b, _))) => Some(vec![Vector::zeros(b.ncols()); horizon + 1]),
        (None, None) => None,
    };
    let tr = simulate_with_input(
        &sys,
        &d,
        u.as_deref(),
        &Vector::zeros(sys.n()),
        horizon,
        args.seed,
        !args.no_noise,
    )?;
    let mut buf = Vec::new();
    io::write_trajectory(&mut buf, &tr)?;
    write_output(args.out.as_deref(), &buf)
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Stable => EXIT_OK,
        Verdict::Unstable => EXIT_UNSTABLE,
        Verdict::Marginal => EXIT_MARGINAL,
    }
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32> {
    check_tol(args.tol)?;
    let sys = io::read_system(&args.system)?;
    let report = verdict_with(&sys, &rde_options(args.tol))?;
    let mut text = serde_json::to_string_pretty(&io::report_json(&report))?;
    text.push('\n');
    write_output(args.out.as_deref(), text.as_bytes())?;
    Ok(verdict_code(report.verdict))
}

/// Errors meaning "this engine does not apply to this system".
fn not_applicable(e: &Error) -> bool {
    matches!(
        e.root(),
        Error::Assumption { .. }
            | Error::NoApplicableVariant(_)
            | Error::UnstableSise(_)
            | Error::NumericalLimit { .. }
            | Error::Unsupported(_)
    )
}

pub fn cmd_filter(args: &FilterArgs) -> Result<i32> {
    check_tol(args.tol)?;
    if !(args.pseudo_variance.is_finite() && args.pseudo_variance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "--pseudo-variance must be positive, got {}",
            args.pseudo_variance
        )));
    }
    let sys = io::read_system(&args.system)?;
    let cols = io::read_columns_file(&args.measurements)?;
    let mut ys = cols.series("y")?;
    check_width("measurements", &ys, sys.p())?;
    let mut us = if sys.known.is_some() {
        let u = cols.series("u")?;
        check_width("known input", &u, sys.known_dim())?;
        Some(u)
    } else {
        None
    };
    if let Some(h) = args.horizon {
        if h + 1 > ys.len() {
            return Err(Error::InvalidArgument(format!(
                "--horizon {h} needs {} measurement rows, file has {}",
                h + 1,
                ys.len()
            )));
        }
        ys.truncate(h + 1);
        if let Some(u) = us.as_mut() {
            u.truncate(h + 1);
        }
    }

    match filter_engine(args, &sys, &ys, us) {
        Ok((est, mut summary)) => {
            let mut buf = Vec::new();
            io::write_estimates(&mut buf, &est)?;
            write_output(args.out.as_deref(), &buf)?;
            if let Some(path) = &args.gains {
                let mut g = Vec::new();
                io::write_gains(&mut g, &est)?;
                fs::write(path, g)?;
            }
            let last = est.len().saturating_sub(1);
            let max_abs_xhat = est.xhat.iter().map(|x| x.amax()).fold(0.0, f64::max);
            summary["steps"] = json!(last);
            summary["final_trace_p"] = json!(finite_or_null(est.trace_p(last)));
            summary["innovation_rms"] = json!(finite_or_null(est.innovation_rms()));
            summary["max_innovation"] = json!(finite_or_null(est.max_innovation()));
            summary["max_abs_xhat"] = json!(finite_or_null(max_abs_xhat));
            let mut text = serde_json::to_string_pretty(&summary)?;
            text.push('\n');
            match &args.summary {
                Some(p) => fs::write(p, text)?,
                None => eprint!("{text}"),
            }
            Ok(EXIT_OK)
        }
        Err(e) if not_applicable(&e) => {
            eprintln!("error: engine {} not applicable: {e}", engine_name(args.engine));
            Ok(EXIT_NOT_APPLICABLE)
        }
        Err(e) => Err(e),
    }
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn filter_engine(
    args: &FilterArgs,
    sys: &LinearSystem,
    ys: &[Vector],
    us: Option<Vec<Vector>>,
) -> Result<(Estimates, Value)> {
    let init = FilterInit::diffuse(sys.n());
    let mut summary = json!({ "engine": args.engine });
    match args.engine {
        Engine::Sise => {
            let variant = Variant::select(sys)?;
            let report = verdict_with(sys, &rde_options(args.tol))?;
            summary["variant"] = json!(variant.name());
            summary["verdict"] = json!(report.verdict);
            summary["spectral_radius"] = json!(report.spectral_radius);
            summary["forced"] = json!(args.force);
            if report.verdict != Verdict::Stable {
                if !args.force {
                    return Err(Error::UnstableSise(format!(
                        "verdict {:?}, spectral radius {:.6}; rerun with --force to run anyway",
                        report.verdict, report.spectral_radius
                    )));
                }
                summary["warning"] = json!("forced run of a configuration predicted to diverge");
            }
            let opts = RunOptions {
                known_inputs: us,
                record_gains: args.gains.is_some(),
                ..RunOptions::default()
            };
            let est = run_filter(sys, ys, &init, &opts)?;
            Ok((est, summary))
        }
        Engine::Akf => {
            summary["pseudo_variance"] = json!(args.pseudo_variance);
            let est = run_akf(sys, ys, &init, args.pseudo_variance, us.as_deref())?;
            Ok((est, summary))
        }
        Engine::OuterPipeline => {
            let out = estimate_via_outer_with(sys, ys, &init, us.as_deref())?;
            summary["pipeline_engine"] = json!(out.engine);
            summary["edge"] = json!(out.edge);
            if let Some(f) = &out.factorization {
                summary["route"] = json!(f.diagnostics.route);
                summary["outer_zero_radius"] = json!(f.diagnostics.outer_zero_radius);
            }
            Ok((out.estimates, summary))
        }
    }
}

pub fn cmd_factorize(args: &FactorizeArgs) -> Result<()> {
    check_tol(args.tol)?;
    if args.grid < 8 {
        return Err(Error::InvalidArgument("--grid must be at least 8".into()));
    }
    let sys = io::read_system(&args.system)?;
    let f = inner_outer_with(&sys, args.grid, &rde_options(args.tol))?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("outer.json"), io::system_to_json(&f.outer) + "\n")?;
    fs::write(args.out.join("inner.json"), io::state_space_to_json(&f.inner) + "\n")?;
    fs::write(
        args.out.join("diagnostics.json"),
        serde_json::to_string_pretty(&f.diagnostics)? + "\n",
    )?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Suite {
    cases: Vec<Case>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Case {
    name: String,
    /// Inline system object or a path relative to the suite file.
    system: Value,
    #[serde(default = "default_horizon")]
    horizon: usize,
    /// Monte Carlo runs; 0 skips the covariance check.
    #[serde(default)]
    runs: usize,
    #[serde(default = "default_mc_horizon")]
    mc_horizon: usize,
    #[serde(default)]
    seed: u64,
}

fn default_horizon() -> usize {
    1000
}

fn default_mc_horizon() -> usize {
    50
}

/// One row of the bench table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub case: usize,
    pub name: String,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub p: Option<usize>,
    pub variant: Option<String>,
    pub verdict: Option<String>,
    pub steps: usize,
    pub wall_s: Option<f64>,
    pub steps_per_s: Option<f64>,
    pub mc_runs: usize,
    pub mc_trace_ratio: Option<f64>,
    pub mc_max_rel_error: Option<f64>,
    /// `ok`, `unstable`, `marginal` or `error: ...`.
    pub flag: String,
}

fn load_case_system(case: &Case, base: &Path) -> Result<LinearSystem> {
    match &case.system {
        Value::String(p) => io::read_system(&base.join(p)),
        v @ Value::Object(_) => io::parse_system(&v.to_string()),
        _ => Err(Error::InvalidArgument(format!(
            "case {}: system must be an object or a path",
            case.name
        ))),
    }
}

fn bench_case(index: usize, case: &Case, base: &Path) -> BenchRow {
    let mut row = BenchRow {
        case: index,
        name: case.name.clone(),
        n: None,
        m: None,
        p: None,
        variant: None,
        verdict: None,
        steps: case.horizon,
        wall_s: None,
        steps_per_s: None,
        mc_runs: 0,
        mc_trace_ratio: None,
        mc_max_rel_error: None,
        flag: "ok".into(),
    };
    if let Err(e) = bench_case_inner(case, base, &mut row) {
        row.flag = format!("error: {e}");
    }
    row
}

fn bench_case_inner(case: &Case, base: &Path, row: &mut BenchRow) -> Result<()> {
    if case.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let sys = load_case_system(case, base)?;
    row.n = Some(sys.n());
    row.m = Some(sys.m());
    row.p = Some(sys.p());
    let variant = Variant::select(&sys)?;
    row.variant = Some(variant.name().to_string());
    let report = verdict_with(&sys, &RdeOptions::default())?;
    row.verdict = Some(format!("{:?}", report.verdict).to_lowercase());
    match report.verdict {
        Verdict::Stable => {}
        Verdict::Unstable => row.flag = "unstable".into(),
        Verdict::Marginal => row.flag = "marginal".into(),
    }

    let d = vec![Vector::zeros(sys.m()); case.horizon + 1];
    let u = sys
        .known
        .as_ref()
        .map(|(b, _)| vec![Vector::zeros(b.ncols()); case.horizon + 1]);
    let tr = simulate_with_input(
        &sys,
        &d,
        u.as_deref(),
        &Vector::zeros(sys.n()),
        case.horizon,
        case.seed,
        true,
    )?;
    let opts = RunOptions {
        known_inputs: u,
        ..RunOptions::default()
    };
    let start = Instant::now();
    let timed = run_filter(&sys, &tr.measurements, &FilterInit::diffuse(sys.n()), &opts);
    let wall = start.elapsed().as_secs_f64();
    timed?;
    row.wall_s = Some(wall);
    row.steps_per_s = Some(case.horizon as f64 / wall.max(1e-12));

    if case.runs > 0 && report.verdict == Verdict::Stable && sys.known.is_none() {
        let cfg = MonteCarloConfig {
            runs: case.runs,
            horizon: case.mc_horizon.max(1),
            seed: case.seed,
            p0: Mat::identity(sys.n(), sys.n()),
            disturbance: None,
            sequential: false,
        };
        let mc = covariance_consistency(&sys, &cfg)?;
        row.mc_runs = mc.runs;
        row.mc_trace_ratio = Some(mc.trace_ratio);
        row.mc_max_rel_error = Some(mc.max_relative_error);
    }
    Ok(())
}

/// Runs every case of a suite; rows come back in case order.
pub fn bench_suite(suite_json: &str, base: &Path) -> Result<Vec<BenchRow>> {
    let suite: Suite = serde_json::from_str(suite_json)?;
    Ok(par::map_indexed(suite.cases.len(), |i| {
        bench_case(i, &suite.cases[i], base)
    }))
}

pub fn write_bench_table<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "case",
        "name",
        "n",
        "m",
        "p",
        "variant",
        "verdict",
        "steps",
        "wall_s",
        "steps_per_s",
        "mc_runs",
        "mc_trace_ratio",
        "mc_max_rel_error",
        "flag",
    ])?;
    let opt_usize = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    let opt_f64 = |v: Option<f64>| v.map(io::fmt_f64).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.case.to_string(),
            r.name.clone(),
            opt_usize(r.n),
            opt_usize(r.m),
            opt_usize(r.p),
            r.variant.clone().unwrap_or_default(),
            r.verdict.clone().unwrap_or_default(),
            r.steps.to_string(),
            opt_f64(r.wall_s),
            opt_f64(r.steps_per_s),
            r.mc_runs.to_string(),
            opt_f64(r.mc_trace_ratio),
            opt_f64(r.mc_max_rel_error),
            r.flag.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let text = fs::read_to_string(&args.suite)?;
    let base = args.suite.parent().unwrap_or(Path::new("."));
    let rows = bench_suite(&text, base)?;
    let mut buf = Vec::new();
    write_bench_table(&mut buf, &rows)?;
    write_output(args.out.as_deref(), &buf)
}

fn engine_name(e: Engine) -> &'static str {
    match e {
        Engine::Sise => "sise",
        Engine::Akf => "akf",
        Engine::OuterPipeline => "outer-pipeline",
    }
}
