//! Argument surface and the single-run and sweep drivers.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::commands::{dln, optim, prepare_named, rmt, spectral, subspace, sweep, train, walk};
use crate::config::{
    merge_flags, read_object, unix_millis, usage, write_json_pretty, CliError, CliResult, JobStatus, ManifestJob,
    RunManifest,
};

const ABOUT: &str = "Numerical laboratory for training instabilities.";

const EXIT_HELP: &str = "\
Every subcommand accepts --config FILE (a JSON object whose keys are the long
flag names, plus an optional \"out\"); flags given on the command line win.
Outputs go to --out DIR (default instabilitylab-out/<subcommand>) together
with config.json (the resolved configuration) and manifest.json.

Exit codes: 0 success (also when a run diverged; a warning is printed),
1 a check failed or a job failed, 2 usage or configuration error.
INSTABILITYLAB_THREADS caps the worker pool.";

#[derive(Debug, Parser)]
#[command(name = "instabilitylab", version, about = ABOUT, after_help = EXIT_HELP, arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Lanczos spectrum of a symmetric matrix.
    #[command(after_help = spectral::HELP)]
    Spectral {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: spectral::SpectralParams,
    },
    /// Principal angles and misalignment between two subspaces.
    #[command(after_help = subspace::HELP)]
    Subspace {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: subspace::SubspaceParams,
    },
    /// GD trajectories of the two-parameter diagonal linear network.
    #[command(after_help = dln::HELP)]
    Dln {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: dln::DlnParams,
    },
    /// Monte Carlo and exact checks for the state-dependent random walk.
    #[command(after_help = walk::HELP)]
    Walk {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: walk::WalkParams,
    },
    /// One optimizer on a test problem, with effective curvature.
    #[command(after_help = optim::HELP)]
    OptimCompare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: optim::OptimParams,
    },
    /// Train a small MLP with curvature diagnostics.
    #[command(after_help = train::HELP)]
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: train::TrainParams,
    },
    /// Spiked-model overlaps against the closed form.
    #[command(after_help = rmt::HELP)]
    Rmt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: rmt::RmtParams,
    },
    /// Grid and repeat sweeps over any other subcommand.
    #[command(after_help = sweep::HELP)]
    Sweep {
        /// Sweep manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit code of a run that produced outputs.
fn exit_for(statuses: impl IntoIterator<Item = JobStatus>) -> i32 {
    let mut code = 0;
    for s in statuses {
        if matches!(s, JobStatus::CheckFailed | JobStatus::Failed) {
            code = 1;
        }
    }
    code
}

/// The file's "out" key, removed so it does not reach the parameter parser.
fn take_out(obj: &mut Map<String, Value>) -> CliResult<Option<PathBuf>> {
    match obj.remove("out") {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
        Some(_) => usage("`out` must be a string"),
    }
}

/// Runs one subcommand; returns the process exit code.
pub fn run_single<P: Serialize>(name: &str, common: &Common, flags: &P) -> CliResult<i32> {
    let mut file = match &common.config {
        Some(p) => read_object(p)?,
        None => Map::new(),
    };
    let file_out = take_out(&mut file)?;
    let prepared = prepare_named(name, merge_flags(file, flags)?)?;
    let out = common
        .out
        .clone()
        .or(file_out)
        .unwrap_or_else(|| Path::new("instabilitylab-out").join(name));
    let started = unix_millis();
    let (seed, hash) = (prepared.seed, prepared.hash.clone());
    let result = prepared.run(&out);
    let (status, message) = match &result {
        Ok(r) => (r.status, (!r.warnings.is_empty()).then(|| r.warnings.join("; "))),
        Err(e) => (JobStatus::Failed, Some(e.to_string())),
    };
    if out.is_dir() {
        let manifest = RunManifest {
            tool: "instabilitylab",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: name.into(),
            config_hash: hash.clone(),
            started_unix_ms: started,
            finished_unix_ms: unix_millis(),
            jobs: vec![ManifestJob {
                index: 0,
                seed: Some(seed),
                config_hash: Some(hash),
                status,
                message,
            }],
        };
        write_json_pretty(&out.join("manifest.json"), &manifest)?;
    }
    let report = result?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for (k, v) in &report.summary {
        println!("{k}: {v}");
    }
    println!("status: {}", report.status.as_str());
    Ok(exit_for([report.status]))
}

pub fn run_sweep_cmd(manifest: &Path, out: Option<&Path>) -> CliResult<i32> {
    let mut obj = read_object(manifest)?;
    let file_out = take_out(&mut obj)?;
    let out = out
        .map(Path::to_path_buf)
        .or(file_out)
        .unwrap_or_else(|| Path::new("instabilitylab-out").join("sweep"));
    let started = unix_millis();
    let outcome = sweep::run_sweep(obj, &out)?;
    let manifest = RunManifest {
        tool: "instabilitylab",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: "sweep".into(),
        config_hash: outcome.config_hash.clone(),
        started_unix_ms: started,
        finished_unix_ms: unix_millis(),
        jobs: outcome.rows.iter().map(|r| r.job.clone()).collect(),
    };
    write_json_pretty(&out.join("manifest.json"), &manifest)?;
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for r in &outcome.rows {
        *counts.entry(r.job.status.as_str()).or_default() += 1;
        for w in &r.warnings {
            eprintln!("warning: job {}: {w}", r.job.index);
        }
        if r.job.status == JobStatus::Failed {
            eprintln!("error: job {}: {}", r.job.index, r.job.message.as_deref().unwrap_or(""));
        }
    }
    println!("jobs: {}", outcome.rows.len());
    for (k, n) in counts {
        println!("{k}: {n}");
    }
    Ok(exit_for(outcome.rows.iter().map(|r| r.job.status)))
}

/// Dispatches a parsed command line.
pub fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Cmd::Spectral { common, params } => run_single("spectral", &common, &params),
        Cmd::Subspace { common, params } => run_single("subspace", &common, &params),
        Cmd::Dln { common, params } => run_single("dln", &common, &params),
        Cmd::Walk { common, params } => run_single("walk", &common, &params),
        Cmd::OptimCompare { common, params } => run_single("optim-compare", &common, &params),
        Cmd::Train { common, params } => run_single("train", &common, &params),
        Cmd::Rmt { common, params } => run_single("rmt", &common, &params),
        Cmd::Sweep { manifest, out } => run_sweep_cmd(&manifest, out.as_deref()),
    }
}

/// Applies `INSTABILITYLAB_THREADS` to the global pool.
pub fn configure_threads(var: Option<String>) -> CliResult<()> {
    let Some(v) = var else {
        return Ok(());
    };
    let n: usize = match v.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => return usage(format!("INSTABILITYLAB_THREADS must be a positive integer, got `{v}`")),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Failure(format!("thread pool: {e}")))
}
