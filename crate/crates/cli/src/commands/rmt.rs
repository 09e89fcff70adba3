use std::path::Path;

use clap::Args;
use instabilitylab::rmt::{bbp_threshold, empirical_overlap, NoiseScaling, SpikedModelConfig};
use serde::{Deserialize, Serialize};

use super::Command;
use crate::config::{fmt_f64, usage, write_csv, CliResult, JobReport};

pub const HELP: &str = "\
Spiked model lambda1 e1 e1^T + Xi/sqrt(B) with Wigner Xi of entry variance
sigma^2/P (or sigma^2 with --scaling per-entry).

Output rmt.csv columns:
  trial              trial index (seed derived from the master seed)
  empirical_overlap  |<v1_hat, e1>|^2 of the leading Lanczos eigenvector
  formula_overlap    1 - sigma^2/(B lambda1^2) above threshold, else 0";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RmtParams {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// per-dimension (default) or per-entry.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RmtConfig {
    pub dim: usize,
    pub batch: usize,
    pub sigma: f64,
    pub lambda1: f64,
    pub trials: usize,
    pub seed: u64,
    pub scaling: String,
}

pub struct Rmt;

impl Command for Rmt {
    const NAME: &'static str = "rmt";
    type Params = RmtParams;
    type Resolved = RmtConfig;

    fn resolve(p: RmtParams) -> CliResult<RmtConfig> {
        let scaling = p.scaling.unwrap_or_else(|| "per-dimension".into());
        if scaling != "per-dimension" && scaling != "per-entry" {
            return usage(format!("`scaling` must be per-dimension or per-entry, got `{scaling}`"));
        }
        let cfg = RmtConfig {
            dim: p.dim.unwrap_or(1000),
            batch: p.batch.unwrap_or(128),
            sigma: p.sigma.unwrap_or(0.1),
            lambda1: p.lambda1.unwrap_or(10.0),
            trials: p.trials.unwrap_or(50),
            seed: p.seed.unwrap_or(0),
            scaling,
        };
        if cfg.trials < 10 {
            return usage("`trials` must be at least 10");
        }
        if let Err(e) = model(&cfg).validate() {
            return usage(e.to_string());
        }
        Ok(cfg)
    }

    fn seed(cfg: &RmtConfig) -> u64 {
        cfg.seed
    }

    fn run(cfg: &RmtConfig, out: &Path) -> CliResult<JobReport> {
        let report = empirical_overlap(&model(cfg), cfg.trials)?;
        let rows: Vec<Vec<String>> = report
            .overlaps
            .iter()
            .enumerate()
            .map(|(k, o)| vec![k.to_string(), fmt_f64(*o), fmt_f64(report.formula)])
            .collect();
        write_csv(&out.join("rmt.csv"), &["trial", "empirical_overlap", "formula_overlap"], &rows)?;
        Ok(JobReport::ok(vec![
            ("mean_overlap".into(), fmt_f64(report.mean)),
            ("ci95".into(), fmt_f64(report.ci95)),
            ("formula_overlap".into(), fmt_f64(report.formula)),
            ("bbp_threshold".into(), fmt_f64(bbp_threshold(cfg.sigma, cfg.batch))),
        ]))
    }
}

fn model(cfg: &RmtConfig) -> SpikedModelConfig {
    SpikedModelConfig {
        dim: cfg.dim,
        batch: cfg.batch,
        sigma: cfg.sigma,
        lambda1: cfg.lambda1,
        seed: cfg.seed,
        scaling: if cfg.scaling == "per-entry" {
            NoiseScaling::PerEntry
        } else {
            NoiseScaling::PerDimension
        },
    }
}
