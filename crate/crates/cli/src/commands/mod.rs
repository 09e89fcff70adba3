//! One module per subcommand. Each pairs a flag/config parameter struct with a
//! resolved configuration and a runner that writes into an output directory.

pub mod dln;
pub mod optim;
pub mod rmt;
pub mod spectral;
pub mod subspace;
pub mod sweep;
pub mod train;
pub mod walk;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{config_hash, ensure_dir, parse_params, usage, write_json_pretty, CliResult, JobReport};

pub trait Command {
    const NAME: &'static str;
    type Params: Serialize + DeserializeOwned;
    type Resolved: Serialize;

    /// Fills defaults, validates values and resolves input paths.
    fn resolve(p: Self::Params) -> CliResult<Self::Resolved>;
    fn seed(cfg: &Self::Resolved) -> u64;
    fn run(cfg: &Self::Resolved, out: &Path) -> CliResult<JobReport>;
}

/// A resolved job ready to run.
pub struct Prepared {
    pub hash: String,
    pub seed: u64,
    runner: Box<dyn FnOnce(&Path) -> CliResult<JobReport> + Send>,
}

impl Prepared {
    /// Echoes the resolved configuration into `out`, then runs.
    pub fn run(self, out: &Path) -> CliResult<JobReport> {
        ensure_dir(out)?;
        (self.runner)(out)
    }
}

fn prepare<C: Command>(obj: Map<String, Value>) -> CliResult<Prepared>
where
    C::Resolved: Send + 'static,
{
    let cfg = C::resolve(parse_params::<C::Params>(obj)?)?;
    Ok(Prepared {
        hash: config_hash(&cfg),
        seed: C::seed(&cfg),
        runner: Box::new(move |out: &Path| {
            write_json_pretty(&out.join("config.json"), &cfg)?;
            C::run(&cfg, out)
        }),
    })
}

/// Resolves a parameter object for the named subcommand.
pub fn prepare_named(name: &str, obj: Map<String, Value>) -> CliResult<Prepared> {
    match name {
        spectral::Spectral::NAME => prepare::<spectral::Spectral>(obj),
        subspace::Subspace::NAME => prepare::<subspace::Subspace>(obj),
        dln::Dln::NAME => prepare::<dln::Dln>(obj),
        walk::Walk::NAME => prepare::<walk::Walk>(obj),
        optim::OptimCompare::NAME => prepare::<optim::OptimCompare>(obj),
        train::Train::NAME => prepare::<train::Train>(obj),
        rmt::Rmt::NAME => prepare::<rmt::Rmt>(obj),
        other => usage(format!("unknown subcommand `{other}` in sweep manifest")),
    }
}

/// Parses `lo:hi:n` into `n` evenly spaced values including both ends.
pub fn parse_grid(spec: &str, key: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || usage(format!("`{key}` must be lo:hi:n, got `{spec}`"));
    if parts.len() != 3 {
        return bad();
    }
    let (Ok(lo), Ok(hi), Ok(n)) = (parts[0].parse::<f64>(), parts[1].parse::<f64>(), parts[2].parse::<usize>()) else {
        return bad();
    };
    if n == 0 || !lo.is_finite() || !hi.is_finite() {
        return bad();
    }
    Ok(if n == 1 {
        vec![lo]
    } else {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    })
}

/// Parses a comma-separated list of numbers.
pub fn parse_list(spec: &str, key: &str) -> CliResult<Vec<f64>> {
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| crate::config::CliError::Usage(format!("`{key}`: bad number `{s}`"))))
        .collect()
}
