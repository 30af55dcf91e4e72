//! The `cpfopt` command line: `run`, `mc-variance` and `compare`.
//!
//! Exit codes: 0 success, 1 I/O, 2 invalid manifest or arguments, 3 numerical
//! failure, 4 no exact reference for `compare`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::Error;
use crate::manifest::{Resolved, RunManifest};
use crate::objective::Objective;
use crate::sim::{self, GridKind, Initializer, TrajectoryLog};

#[derive(Debug, Parser)]
#[command(name = "cpfopt", version, about = "Controlled particle filters for global optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one configuration and write its trajectory.
    Run(CommonArgs),
    /// Monte-Carlo variance of the final mean over the `[mc]` grid.
    McVariance(CommonArgs),
    /// Errors against the exact references, plus ĥ for every controlled backend.
    Compare(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Overrides `config.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Validation(String),
    Numerical(String),
    OracleUnavailable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::OracleUnavailable(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::OracleUnavailable(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument { .. } => CliError::Validation(e.to_string()),
            Error::OracleUnavailable(_) => CliError::OracleUnavailable(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::McVariance(a) => cmd_mc_variance(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

/// Fixed 17-significant-digit scientific format; round-trips every `f64`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn load(args: &CommonArgs) -> CliResult<Resolved> {
    let text = fs::read_to_string(&args.manifest)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.manifest.display())))?;
    let mut m = RunManifest::from_toml(&text)?;
    if let Some(seed) = args.seed {
        m.config.seed = seed;
    }
    Ok(m.resolve()?)
}

fn write(dir: &Path, name: &str, body: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// First line of every CSV: the seed and the resolved manifest as JSON.
fn provenance(m: &RunManifest) -> String {
    let cfg = serde_json::to_string(m).expect("manifest serializes");
    format!("# seed={} manifest={cfg}\n", m.config.seed)
}

fn note(args: &CommonArgs, msg: impl AsRef<str>) {
    if !args.quiet {
        println!("{}", msg.as_ref());
    }
}

pub fn trajectory_csv(m: &RunManifest, log: &TrajectoryLog) -> String {
    let mut s = provenance(m);
    s.push_str("t,hhat");
    for i in 1..=log.dim {
        let _ = write!(s, ",mean_{i}");
    }
    s.push_str(",cov_trace\n");
    for k in 0..log.len() {
        s.push_str(&num(log.times[k]));
        s.push(',');
        s.push_str(&num(log.hhat[k]));
        for v in log.mean[k].iter() {
            s.push(',');
            s.push_str(&num(*v));
        }
        s.push(',');
        s.push_str(&num(log.cov_trace[k]));
        s.push('\n');
    }
    s
}

pub fn snapshots_csv(m: &RunManifest, log: &TrajectoryLog) -> String {
    let mut s = provenance(m);
    s.push_str("t,particle_id");
    for i in 1..=log.dim {
        let _ = write!(s, ",x_{i}");
    }
    s.push('\n');
    for snap in &log.snapshots {
        for (p, x) in snap.positions.chunks(log.dim).enumerate() {
            s.push_str(&num(snap.t));
            let _ = write!(s, ",{p}");
            for v in x {
                s.push(',');
                s.push_str(&num(*v));
            }
            s.push('\n');
        }
    }
    s
}

fn sidecar(m: &RunManifest, extra: serde_json::Value) -> String {
    let mut out = serde_json::to_string_pretty(&json!({
        "seed": m.config.seed,
        "manifest": m,
        "result": extra,
    }))
    .expect("sidecar serializes");
    out.push('\n');
    out
}

fn cmd_run(args: &CommonArgs) -> CliResult<()> {
    let r = load(args)?;
    let m = &r.manifest;
    note(args, format!("run: {} with {} particles, {} steps", m.config.gain_method.name(), m.config.n_particles, m.config.steps()));
    let log = sim::run(&m.config, &r.objective, &r.init)?;
    let p = write(&args.out_dir, &m.outputs.trajectory, &trajectory_csv(m, &log))?;
    note(args, format!("wrote {}", p.display()));
    if let Some(name) = &m.outputs.snapshots {
        let p = write(&args.out_dir, name, &snapshots_csv(m, &log))?;
        note(args, format!("wrote {}", p.display()));
    }
    let extra = json!({
        "rows": log.len(),
        "final_mean": log.final_mean().as_slice(),
        "flagged_steps": log.flagged_steps,
        "stopped_early": log.stopped_early,
    });
    write(&args.out_dir, &m.outputs.sidecar, &sidecar(m, extra))?;
    Ok(())
}

fn cmd_mc_variance(args: &CommonArgs) -> CliResult<()> {
    let r = load(args)?;
    let m = &r.manifest;
    let mc = m
        .mc
        .as_ref()
        .ok_or_else(|| CliError::Validation("mc-variance needs an [mc] section".into()))?;
    note(args, format!("mc-variance: {} replicates over {:?}", mc.replicates, mc.values));
    let report = match mc.grid_kind {
        GridKind::N => sim::mc_variance_study(&m.config, &r.objective, &r.init, &mc.values, mc.replicates)?,
        GridKind::D => sim::mc_variance_study_dims(&m.config, &mc.values, mc.replicates, |d| {
            let obj: Objective = m.objective.with_dim(d)?.build()?;
            let init: Initializer = m.init.with_dim(d)?.build(Some(d))?;
            Ok((obj, init))
        })?,
    };
    let mut s = provenance(m);
    s.push_str("N_or_d,mc_var,J\n");
    for (g, v) in report.grid.iter().zip(&report.mc_var) {
        let _ = writeln!(s, "{g},{},{}", num(*v), report.replicates);
    }
    let p = write(&args.out_dir, &m.outputs.mc_variance, &s)?;
    note(args, format!("wrote {}", p.display()));
    let slope = if report.grid.len() >= 2 { Some(report.log_log_slope()) } else { None };
    write(&args.out_dir, &m.outputs.sidecar, &sidecar(m, json!({ "log_log_slope": slope })))?;
    Ok(())
}

fn oracle_applies(obj: &Objective, init: &Initializer) -> bool {
    (obj.quadratic().is_some() && matches!(init, Initializer::Gaussian(_))) || init.dim() == 1
}

fn cmd_compare(args: &CommonArgs) -> CliResult<()> {
    let mut r = load(args)?;
    if !oracle_applies(&r.objective, &r.init) {
        return Err(CliError::OracleUnavailable(format!(
            "no exact reference for objective `{}` in d = {}: need a quadratic objective with a Gaussian prior, or d = 1",
            r.objective.name(),
            r.init.dim()
        )));
    }
    if r.manifest.config.method_params.snapshot_every.is_none() && r.init.dim() == 1 {
        r.manifest.config.method_params.snapshot_every = Some((r.manifest.config.steps() / 10).max(1));
    }
    let m = &r.manifest;
    note(args, format!("compare: {} against the exact reference", m.config.gain_method.name()));
    let log = sim::run(&m.config, &r.objective, &r.init)?;
    let report = sim::compare_to_oracle(&log, &m.config, &r.objective, &r.init)?;
    if let Some(me) = &report.moments {
        let mut s = provenance(m);
        s.push_str("t,mean_err,cov_err\n");
        for k in 0..me.times.len() {
            let _ = writeln!(s, "{},{},{}", num(me.times[k]), num(me.mean_err[k]), num(me.cov_err[k]));
        }
        let p = write(&args.out_dir, &m.outputs.compare, &s)?;
        note(args, format!("wrote {}", p.display()));
    }
    if let Some(de) = &report.distribution {
        let mut s = provenance(m);
        s.push_str("t,ks\n");
        for (t, ks) in de.times.iter().zip(&de.ks) {
            let _ = writeln!(s, "{},{}", num(*t), num(*ks));
        }
        let name = if report.moments.is_some() { &m.outputs.compare_ks } else { &m.outputs.compare };
        let p = write(&args.out_dir, name, &s)?;
        note(args, format!("wrote {}", p.display()));
    }

    let logs = sim::run_backends(&m.config, &r.objective, &r.init)?;
    let rows = logs.iter().map(|(_, l)| l.len()).max().unwrap_or(0);
    let mut s = provenance(m);
    s.push('t');
    for (method, _) in &logs {
        let _ = write!(s, ",hhat_{}", method.name());
    }
    s.push('\n');
    let longest = logs.iter().max_by_key(|(_, l)| l.len()).map(|(_, l)| &l.times);
    for k in 0..rows {
        s.push_str(&num(longest.map_or(f64::NAN, |t| t[k])));
        for (_, l) in &logs {
            s.push(',');
            // Affine runs may stop early on a collapsed covariance.
            if let Some(h) = l.hhat.get(k) {
                s.push_str(&num(*h));
            }
        }
        s.push('\n');
    }
    let p = write(&args.out_dir, &m.outputs.hhat_backends, &s)?;
    note(args, format!("wrote {}", p.display()));
    let extra = json!({
        "max_mean_err": report.moments.as_ref().map(|me| me.max_mean_err()),
        "ks": report.distribution.as_ref().map(|d| &d.ks),
    });
    write(&args.out_dir, &m.outputs.sidecar, &sidecar(m, extra))?;
    Ok(())
}
