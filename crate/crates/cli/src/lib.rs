//! Experiment runner for `hjh-core`.
//!
//! `hjh <subcommand> [--config FILE] [--out DIR] [--threads N]` resolves a
//! configuration, runs the experiment on a work-stealing pool and writes
//! deterministic CSV files plus `manifest.toml`. `hjh --manifest FILE` reruns
//! a previous experiment from its manifest.

pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use config::{resolve, ExperimentConfig, FieldError, SubcommandName};
use experiments::Artifacts;
use hjh_core::output::{fmt_f64, Table};

const SCHEMAS: &str = "\
Record columns (file <subcommand>.csv):
  metric    seed_index,seed,x,y,m
  cell      seed_index,seed,p1,p2,delta,value,residual,sweeps,kp,h_inf,h_sup
  hbar      route,p1,p2,value,se,ci_low,ci_high,systematic,flat_spot,exact
  fluct     t,seed_index,seed,m            (+ fluct_moments.csv, fluct_tail.csv)
  bias      t,mean,se,bias,one_sided
  gsigma    sigma,t,g_big,g_hat,plane_mean,plane_se,upper_constant,upper_ok,lower_ok
  flatspot  seed_index,seed,delta,measured,lower,lower_radius,upper,upper_radius,constant,tol,lower_ok,upper_ok
  subrate   seed_index,seed,delta,value     (+ subrate_tail.csv)
  homog     eps,seed_index,seed,sup_error
  aprate    eps,sup_error,envelope,cube_root_bound (+ aprate_rho.csv, aprate_eta.csv, aprate_osc.csv)
Every run also writes <subcommand>_plot.csv (series,x,y,yerr), summary.csv
(key,value), timing.csv (stage,seconds) and manifest.toml. Only timing.csv and
the [meta] table of the manifest vary between identical runs.";

#[derive(Debug, Parser)]
#[command(name = "hjh", version, about = "Experiments on stochastic homogenization of Hamilton-Jacobi equations", after_help = SCHEMAS)]
pub struct Args {
    /// TOML configuration; keys not given take the subcommand's defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (falls back to HJH_THREADS, then to all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Rerun from a manifest written by an earlier run.
    #[arg(long, global = true, value_name = "FILE", conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Metric problem from the origin on a centered grid.
    Metric,
    /// Discounted cell problem, -delta v(0) per slope and replica.
    Cell,
    /// Effective Hamiltonian by the metric and cell routes.
    Hbar,
    /// Fluctuations of the metric along a horizon ladder.
    Fluct,
    /// One-sided bias of the metric against a Fekete reference.
    Bias,
    /// Plane-crossing statistic G_sigma and its sandwich.
    Gsigma,
    /// Deterministic flat-spot bounds per realization.
    Flatspot,
    /// Decay rate of -delta v(0; 0) on the flat spot.
    Subrate,
    /// Homogenization error along an epsilon ladder.
    Homog,
    /// Explicit rate for almost-periodic media.
    Aprate,
}

impl Command {
    pub fn name(self) -> SubcommandName {
        match self {
            Command::Metric => SubcommandName::Metric,
            Command::Cell => SubcommandName::Cell,
            Command::Hbar => SubcommandName::Hbar,
            Command::Fluct => SubcommandName::Fluct,
            Command::Bias => SubcommandName::Bias,
            Command::Gsigma => SubcommandName::Gsigma,
            Command::Flatspot => SubcommandName::Flatspot,
            Command::Subrate => SubcommandName::Subrate,
            Command::Homog => SubcommandName::Homog,
            Command::Aprate => SubcommandName::Aprate,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<FieldError>),
    #[error("experiment failed: {0}")]
    Runtime(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) | RunError::Io { .. } => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Runtime(_) => "runtime",
            RunError::Io { .. } => "io",
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Serialize)]
struct ErrorFile<'a> {
    status: &'static str,
    kind: &'static str,
    message: String,
    fields: &'a [FieldError],
}

/// Machine-readable failure report, as written to `error.json`.
pub fn error_json(e: &RunError) -> String {
    let fields: &[FieldError] = match e {
        RunError::Config(f) => f,
        _ => &[],
    };
    let body = ErrorFile { status: "error", kind: e.kind(), message: e.to_string(), fields };
    serde_json::to_string_pretty(&body).expect("error report serializes") + "\n"
}

/// Configuration from the arguments alone (no experiment is run).
pub fn load_config(args: &Args) -> Result<ExperimentConfig, RunError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| RunError::Config(vec![FieldError { field: "config".into(), message: format!("{}: {e}", p.display()) }]));
    let text = match (&args.config, &args.manifest) {
        (Some(p), _) | (None, Some(p)) => Some(read(p)?),
        (None, None) => None,
    };
    let mut cfg = resolve(text.as_deref(), args.command.map(Command::name)).map_err(RunError::Config)?;
    if let Some(out) = &args.out {
        cfg.output.directory = out.display().to_string();
    }
    Ok(cfg)
}

pub fn thread_count(args: &Args) -> Result<Option<usize>, RunError> {
    if let Some(n) = args.threads {
        return if n == 0 {
            Err(RunError::Config(vec![FieldError { field: "threads".into(), message: "must be positive".into() }]))
        } else {
            Ok(Some(n))
        };
    }
    match std::env::var("HJH_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(RunError::Config(vec![FieldError { field: "HJH_THREADS".into(), message: format!("`{v}` is not a positive integer") }])),
        },
        Err(_) => Ok(None),
    }
}

fn plot_table(a: &Artifacts) -> Table {
    let mut t = Table::new(["series", "x", "y", "yerr"]);
    for (s, x, y, e) in &a.plot {
        t.push(vec![s.as_str().into(), (*x).into(), (*y).into(), (*e).into()]);
    }
    t
}

fn summary_table(a: &Artifacts) -> Table {
    let mut t = Table::new(["key", "value"]);
    for (k, v) in &a.summary {
        t.push(vec![k.as_str().into(), v.clone()]);
    }
    t
}

fn timing_csv(a: &Artifacts) -> String {
    let mut s = String::from("stage,seconds\n");
    for (k, v) in &a.timing {
        s.push_str(&format!("{k},{}\n", fmt_f64(*v)));
    }
    s
}

#[derive(Serialize)]
struct Meta {
    subcommand: String,
    code_version: String,
    threads: usize,
    started_unix_seconds: f64,
    wall_clock_seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    config: &'a ExperimentConfig,
    meta: Meta,
}

/// Writes every artifact; on failure removes what was written.
fn write_outputs(cfg: &ExperimentConfig, a: &Artifacts, meta: Meta) -> Result<Vec<PathBuf>, RunError> {
    let dir = PathBuf::from(&cfg.output.directory);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut contents: Vec<(String, String)> = Vec::new();
    if cfg.output.formats.iter().any(|f| f == "csv") {
        for (stem, t) in &a.tables {
            contents.push((format!("{stem}.csv"), t.to_csv()));
        }
        contents.push(("summary.csv".into(), summary_table(a).to_csv()));
    }
    if cfg.output.formats.iter().any(|f| f == "plot") {
        contents.push((format!("{}_plot.csv", cfg.subcommand), plot_table(a).to_csv()));
    }
    contents.push(("timing.csv".into(), timing_csv(a)));
    let manifest = toml::to_string(&Manifest { config: cfg, meta }).map_err(|e| RunError::Runtime(format!("manifest: {e}")))?;
    contents.push(("manifest.toml".into(), manifest));
    let _ = fs::remove_file(dir.join("error.json"));
    let mut written = Vec::new();
    for (name, body) in contents {
        let path = dir.join(&name);
        if let Err(e) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(io_err(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

fn remove_stale(cfg: &ExperimentConfig) {
    let dir = PathBuf::from(&cfg.output.directory);
    let sub = cfg.subcommand.name();
    let mut stale = vec![format!("{sub}.csv"), format!("{sub}_plot.csv"), "summary.csv".into(), "timing.csv".into(), "manifest.toml".into()];
    for extra in ["fluct_moments", "fluct_tail", "subrate_tail", "aprate_rho", "aprate_eta", "aprate_osc"] {
        if extra.starts_with(sub) {
            stale.push(format!("{extra}.csv"));
        }
    }
    for s in stale {
        let _ = fs::remove_file(dir.join(s));
    }
}

fn report_failure(dir: &Path, e: &RunError) {
    if fs::create_dir_all(dir).is_ok() {
        let _ = fs::write(dir.join("error.json"), error_json(e));
    }
}

/// Runs a resolved configuration on a pool of `threads` workers and writes
/// its artifacts. On failure, outputs of this subcommand are removed and
/// `error.json` is written instead.
pub fn run(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<PathBuf>, RunError> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| RunError::Runtime(format!("thread pool: {e}")))?;
    let n_threads = pool.current_num_threads();
    let result = pool.install(|| experiments::run(cfg)).map_err(RunError::Runtime).and_then(|a| {
        let meta = Meta {
            subcommand: cfg.subcommand.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: n_threads,
            started_unix_seconds: started,
            wall_clock_seconds: clock.elapsed().as_secs_f64(),
        };
        write_outputs(cfg, &a, meta)
    });
    if let Err(e) = &result {
        remove_stale(cfg);
        report_failure(Path::new(&cfg.output.directory), e);
    }
    result
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let fallback_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let cfg = match load_config(&args).and_then(|c| thread_count(&args).map(|t| (c, t))) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hjh: {e}");
            report_failure(&fallback_dir, &e);
            return e.exit_code();
        }
    };
    match run(&cfg.0, cfg.1) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("hjh: {e}");
            e.exit_code()
        }
    }
}

/// Reads `summary.csv` back as `(key, value)` pairs.
pub fn read_summary(dir: &Path) -> std::io::Result<Vec<(String, String)>> {
    let text = fs::read_to_string(dir.join("summary.csv"))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(',').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect())
}
