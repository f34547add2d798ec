//! `qclab`: runs experiments described by a JSON config.
//!
//! Exit codes: 0 success, 1 failed checks or other errors, 2 invalid config,
//! 3 runtime abort (outputs written so far are kept).

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use qclab::config::{ConfigError, ExperimentConfig};
use qclab::convergence::{self, ConvergenceError, SweepResult};
use qclab::export::{self, Manifest};
use qclab::wigner;
use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Parser)]
#[command(name = "qclab", version, about = "Semiclassical quantum vs classical transport experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Output directory (default: runs/<config name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the classical sampling and commutator seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved plan and exit without writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transform {
    Wave,
    Wigner,
    Husimi,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config; `-` reads standard input.
    ValidateConfig { config: String },
    /// Quantum runs with conservation and estimate diagnostics.
    RunQuantum {
        #[command(flatten)]
        run: RunArgs,
        /// Also write every snapshot as a raw field.
        #[arg(long)]
        fields: bool,
    },
    /// Classical reference ensembles and Liouville residuals.
    RunClassical {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Full eps-sweep: pairings, weak distances and rate fits.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        fields: bool,
    },
    /// A priori estimate checks plus the commutator sign survey.
    CheckEstimates {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write one snapshot as a raw field with a JSON sidecar.
    ExportField {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        eps_index: usize,
        #[arg(long, default_value_t = 0)]
        snapshot: usize,
        #[arg(long, value_enum, default_value = "wave")]
        transform: Transform,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Abort(String),
    Checks(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ConvergenceError> for Failure {
    fn from(e: ConvergenceError) -> Self {
        match e {
            ConvergenceError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Abort(m)) => {
            eprintln!("aborted: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Checks(m)) => {
            eprintln!("checks failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_config(path: &str) -> Result<ExperimentConfig, Failure> {
    let text = if path == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).context("reading standard input")?;
        s
    } else {
        std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?
    };
    Ok(ExperimentConfig::from_json(&text)?)
}

fn load(run: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = read_config(&run.config.to_string_lossy())?;
    if let Some(seed) = run.seed {
        cfg.classical.seed = seed;
        cfg.estimates.commutator_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(run: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    run.out.clone().unwrap_or_else(|| Path::new("runs").join(&cfg.name))
}

/// Prints one line per eps: grid, spacing, time step, step count and field memory.
fn print_plan(cfg: &ExperimentConfig, with_dictionary: bool) -> Result<(), Failure> {
    let dictionary = if with_dictionary { convergence::build_dictionary(cfg)? } else { Vec::new() };
    let plans = convergence::plan_all(cfg, &dictionary)?;
    convergence::preflight(cfg, &plans, &dictionary)?;
    println!("config {} ({}), {} probes, {} snapshots", cfg.name, cfg.hash(), dictionary.len(), cfg.snapshot_count);
    for p in &plans {
        println!(
            "eps={} N={:?} h={:?} dt={:.6e} steps={} memory={:.3}MiB",
            p.eps,
            p.points,
            p.spacing,
            p.dt,
            p.total_steps,
            p.field_bytes as f64 / (1 << 20) as f64
        );
    }
    Ok(())
}

struct Session {
    dir: PathBuf,
    start: Instant,
    started_unix: f64,
    outputs: Vec<PathBuf>,
}

impl Session {
    fn open(dir: PathBuf) -> Result<Self, Failure> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Ok(Session { dir, start: Instant::now(), started_unix, outputs: Vec::new() })
    }

    fn close(self, cfg: &ExperimentConfig, exit_code: i32) -> Result<(), Failure> {
        let mut versions = BTreeMap::new();
        versions.insert("qclab".to_string(), qclab::VERSION.to_string());
        versions.insert("qclab-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let outputs = self
            .outputs
            .iter()
            .map(|p| p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().into_owned())
            .collect();
        let manifest = Manifest {
            schema_version: convergence::SCHEMA_VERSION,
            command: std::env::args().collect(),
            config_hash: cfg.hash(),
            potential_hash: cfg.potential.hash(),
            started_unix: self.started_unix,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            versions,
            outputs,
            exit_code,
        };
        manifest.write(&self.dir).context("writing manifest")?;
        Ok(())
    }
}

/// Exit status for a finished run: abort beats failed checks.
fn verdict(result: &SweepResult) -> Result<(), Failure> {
    if result.partial {
        let reasons: Vec<String> = result
            .cells
            .iter()
            .filter_map(|c| match &c.status {
                convergence::CellStatus::Aborted { reason } => Some(format!("eps {}: {reason}", c.eps)),
                convergence::CellStatus::Complete => None,
            })
            .collect();
        return Err(Failure::Abort(reasons.join("; ")));
    }
    let failed: Vec<&str> = result.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Checks(failed.join(", ")))
    }
}

fn exit_code(r: &Result<(), Failure>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(Failure::Config(_)) => 2,
        Err(Failure::Abort(_)) => 3,
        Err(_) => 1,
    }
}

fn summarize(result: &SweepResult) {
    for c in &result.cells {
        let last = c.weak_distance.last().copied().flatten();
        let drift = c.relative_energy_drift().unwrap_or(0.0);
        match (&c.status, last) {
            (convergence::CellStatus::Complete, Some(d)) => println!("eps={} final weak distance {d:.4e}, energy drift {drift:.2e}", c.eps),
            (convergence::CellStatus::Complete, None) => println!("eps={} complete, energy drift {drift:.2e}", c.eps),
            (convergence::CellStatus::Aborted { reason }, _) => println!("eps={} aborted after {} snapshots: {reason}", c.eps, c.times.len()),
        }
    }
    for ch in &result.checks {
        println!("[{}] {} = {:.4e} (threshold {:.4e})", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.value, ch.threshold);
    }
}

fn field_writer<'a>(dir: &'a Path, hash: &'a str, written: &'a std::sync::Mutex<Vec<PathBuf>>) -> impl Fn(usize, usize, &qclab::quantum::WaveFunction) + Sync + 'a {
    move |cell, snap, wf| {
        let path = dir.join(format!("field_eps{cell}_t{snap:03}.bin"));
        match export::write_wave(&path, wf, hash) {
            Ok(()) => written.lock().expect("lock").push(path),
            Err(e) => eprintln!("warning: could not write {}: {e}", path.display()),
        }
    }
}

fn run_and_write(run: &RunArgs, fields: bool, quantum_only: bool) -> Result<(), Failure> {
    let cfg = load(run)?;
    if !quantum_only && cfg.dictionary.is_none() {
        return Err(Failure::Config("config error at `dictionary`: a sweep needs a probe dictionary".into()));
    }
    if run.dry_run {
        return print_plan(&cfg, !quantum_only);
    }
    let mut session = Session::open(out_dir(run, &cfg))?;
    let hash = cfg.potential.hash();
    let written = std::sync::Mutex::new(Vec::new());
    let dir = session.dir.clone();
    let result = {
        let writer = field_writer(&dir, &hash, &written);
        let observer: Option<convergence::SnapshotObserver<'_>> = if fields { Some(&writer) } else { None };
        convergence::run(&cfg, convergence::RunOptions { quantum_only, observer })?
    };
    summarize(&result);
    session.outputs.extend(export::write_sweep(&result, &session.dir).map_err(|e| Failure::Other(e.into()))?);
    session.outputs.extend(written.into_inner().expect("lock"));
    let status = verdict(&result);
    session.close(&cfg, exit_code(&status))?;
    status
}

fn run_classical(run: &RunArgs) -> Result<(), Failure> {
    let cfg = load(run)?;
    if run.dry_run {
        let n = match cfg.classical.mode {
            qclab::config::ReferenceMode::DeltaLimit => 1,
            qclab::config::ReferenceMode::Husimi { n } => n,
            qclab::config::ReferenceMode::Wigner { nodes } => nodes.pow(2 * cfg.dim() as u32),
        };
        println!("config {} ({}), classical {:?}, {} particles, dt {}", cfg.name, cfg.hash(), cfg.classical.mode, n, cfg.classical.dt);
        return Ok(());
    }
    let mut session = Session::open(out_dir(run, &cfg))?;
    let runs = convergence::run_classical(&cfg)?;
    let mut residuals = serde_json::Map::new();
    let mut aborts = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        match &r.trajectory {
            Ok(traj) => {
                let path = session.dir.join(format!("ensemble_eps{i}.csv"));
                export::write_ensemble_csv(&path, traj).map_err(|e| Failure::Other(e.into()))?;
                session.outputs.push(path);
                let stopped = traj.last().map_or(0.0, |e| e.stopped_weight());
                println!("eps={} {} particles, stopped weight {stopped:.3e}", r.eps, traj[0].len());
            }
            Err(e) => aborts.push(format!("eps {}: {e}", r.eps)),
        }
        let per: serde_json::Map<String, serde_json::Value> =
            r.residuals.iter().map(|(id, v)| (id.clone(), serde_json::json!(v))).collect();
        residuals.insert(format!("{}", r.eps), serde_json::Value::Object(per));
    }
    let path = session.dir.join("residuals.json");
    std::fs::write(&path, serde_json::to_string_pretty(&residuals).context("serializing residuals")?).context("writing residuals")?;
    session.outputs.push(path);
    let status = if aborts.is_empty() { Ok(()) } else { Err(Failure::Abort(aborts.join("; "))) };
    session.close(&cfg, exit_code(&status))?;
    status
}

fn check_estimates(run: &RunArgs) -> Result<(), Failure> {
    let cfg = load(run)?;
    if run.dry_run {
        return print_plan(&cfg, false);
    }
    let mut session = Session::open(out_dir(run, &cfg))?;
    let result = convergence::run_quantum(&cfg, None)?;
    summarize(&result);
    session.outputs.extend(export::write_sweep(&result, &session.dir).map_err(|e| Failure::Other(e.into()))?);
    let mut failed: Vec<String> = result.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    if cfg.estimates.commutator_states > 0 {
        let plan = &result.cells[0].plan;
        let grid = cfg.grid_for(plan)?;
        let survey = convergence::commutator_survey(&grid, &cfg.potential, cfg.estimates.commutator_states, cfg.estimates.commutator_seed)?;
        let path = session.dir.join("commutator.csv");
        let mut text = String::from("state,value,scale,relative\n");
        let mut worst = f64::INFINITY;
        for (i, (v, s)) in survey.iter().enumerate() {
            let rel = if *s > 0.0 { v / s } else { 0.0 };
            worst = worst.min(rel);
            text.push_str(&format!("{i},{v},{s},{rel}\n"));
        }
        std::fs::write(&path, text).context("writing commutator.csv")?;
        session.outputs.push(path);
        let ok = worst >= -1e-9;
        println!("[{}] commutator_positivity min relative = {worst:.3e} over {} states", if ok { "PASS" } else { "FAIL" }, survey.len());
        if !ok {
            failed.push("commutator_positivity".into());
        }
    }
    let status = if result.partial {
        verdict(&result)
    } else if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Checks(failed.join(", ")))
    };
    session.close(&cfg, exit_code(&status))?;
    status
}

fn export_field(run: &RunArgs, eps_index: usize, snapshot: usize, transform: Transform) -> Result<(), Failure> {
    let cfg = load(run)?;
    if run.dry_run {
        return print_plan(&cfg, cfg.dictionary.is_some());
    }
    let wf = convergence::state_at(&cfg, eps_index, snapshot)?;
    let mut session = Session::open(out_dir(run, &cfg))?;
    let hash = cfg.potential.hash();
    let stem = format!("eps{eps_index}_t{snapshot:03}");
    let path = match transform {
        Transform::Wave => {
            let p = session.dir.join(format!("wave_{stem}.bin"));
            export::write_wave(&p, &wf, &hash).context("writing field")?;
            p
        }
        Transform::Wigner | Transform::Husimi => {
            let (kind, field) = match transform {
                Transform::Wigner => ("wigner", wigner::wigner_full(&wf)),
                _ => ("husimi", wigner::husimi(&wf)),
            };
            let field = field.map_err(|e| Failure::Other(e.into()))?;
            let p = session.dir.join(format!("{kind}_{stem}.bin"));
            export::write_phase_field(&p, &field, kind, &hash).context("writing field")?;
            p
        }
    };
    println!("wrote {}", path.display());
    session.outputs.push(path.with_extension("json"));
    session.outputs.push(path);
    session.close(&cfg, 0)?;
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::ValidateConfig { config } => {
            let cfg = read_config(&config)?;
            let dictionary = if cfg.dictionary.is_some() { convergence::build_dictionary(&cfg)? } else { Vec::new() };
            convergence::preflight(&cfg, &convergence::plan_all(&cfg, &dictionary)?, &dictionary)?;
            println!("ok: {} ({})", cfg.name, cfg.hash());
            Ok(())
        }
        Command::RunQuantum { run, fields } => run_and_write(&run, fields, true),
        Command::Sweep { run, fields } => run_and_write(&run, fields, false),
        Command::RunClassical { run } => run_classical(&run),
        Command::CheckEstimates { run } => check_estimates(&run),
        Command::ExportField { run, eps_index, snapshot, transform } => export_field(&run, eps_index, snapshot, transform),
    }
}
