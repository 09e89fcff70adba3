use std::path::{Path, PathBuf};

use clap::Args;
use instabilitylab::optim::{OptimizerConfig, OptimizerKind};
use instabilitylab::toytrain::{
    train, Activation, Dataset, DiagnosticsConfig, HvpMethod, Intervention, MlpArch, MlpModel, TrainConfig, TrainLoss,
};
use serde::{Deserialize, Serialize};

use super::{parse_list, Command};
use crate::config::{fmt_f64, resolve_input, usage, write_csv, write_lines, CliError, CliResult, JobReport, JobStatus};

pub const HELP: &str = "\
Full-batch training of a small MLP with curvature diagnostics.
--data is blobs[:K,SEP[,SEED]] (two Gaussian classes, default 512,2,0) or
csv:PATH (headed CSV, features then integer label). --intervene EPOCH:ETA or
EPOCH:OPTIMIZER may repeat.

Output train.jsonl: one object per epoch with fields epoch, eta, loss,
lambda_max, lambda_neg, delta_t (eta lambda_max - 2), u_proxy, gamma_u_abs,
xi_sign, theta_osc, subspace_score_vs_baseline, alpha_selfstab, alpha_reliable
(null when not diagnosed that epoch).

Output summary.csv columns (one row):
  epochs_run, final_loss, max_lambda
  instability_epochs     diagnosed epochs with delta_t > 0
  spearman_gamma_lambda  Spearman(|gamma_U|, lambda_max) over those epochs, empty if undefined
  xi_positive, xi_negative  sign counts of the curvature-change direction
  diverged               true when the loss blew up";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainParams {
    /// Layer widths, e.g. 10,32,32,2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<String>,
    /// Hidden activation: relu or identity.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub act: Option<String>,
    /// ce or mse.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opt: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intervene: Option<Vec<String>>,
    /// Diagnostic cadence in epochs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diag_every: Option<usize>,
    /// Hessian-vector products: exact or fd.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hvp: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DataSpec {
    Blobs { k: usize, separation: f64, seed: u64 },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainCliConfig {
    pub dims: Vec<usize>,
    pub act: String,
    pub loss: String,
    pub opt: String,
    pub eta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub data: DataSpec,
    pub interventions: Vec<Intervention>,
    pub diag_every: Option<usize>,
    pub hvp: String,
}

fn parse_data(spec: &str) -> CliResult<DataSpec> {
    if let Some(path) = spec.strip_prefix("csv:") {
        return Ok(DataSpec::Csv {
            path: resolve_input(Path::new(path), "data")?,
        });
    }
    let args = match spec.strip_prefix("blobs") {
        Some("") => Vec::new(),
        Some(rest) => match rest.strip_prefix(':') {
            Some(a) => parse_list(a, "data")?,
            None => return usage(format!("`data` must be blobs[:K,SEP[,SEED]] or csv:PATH, got `{spec}`")),
        },
        None => return usage(format!("`data` must be blobs[:K,SEP[,SEED]] or csv:PATH, got `{spec}`")),
    };
    let (k, separation, seed) = match args.as_slice() {
        [] => (512.0, 2.0, 0.0),
        [k, s] => (*k, *s, 0.0),
        [k, s, seed] => (*k, *s, *seed),
        _ => return usage("blobs takes K,SEP or K,SEP,SEED"),
    };
    if k < 2.0 || k.fract() != 0.0 || seed < 0.0 || seed.fract() != 0.0 {
        return usage("blobs needs an integer K >= 2 and a non-negative integer seed");
    }
    Ok(DataSpec::Blobs {
        k: k as usize,
        separation,
        seed: seed as u64,
    })
}

fn parse_intervention(spec: &str) -> CliResult<Intervention> {
    let bad = || usage(format!("`intervene` must be EPOCH:ETA or EPOCH:OPTIMIZER, got `{spec}`"));
    let Some((e, v)) = spec.split_once(':') else {
        return bad();
    };
    let Ok(epoch) = e.parse::<usize>() else {
        return bad();
    };
    if let Ok(eta) = v.parse::<f64>() {
        if !(eta > 0.0 && eta.is_finite()) {
            return bad();
        }
        return Ok(Intervention::Eta { epoch, eta });
    }
    match v.parse::<OptimizerKind>() {
        Ok(kind) => Ok(Intervention::Optimizer { epoch, kind }),
        Err(_) => bad(),
    }
}

pub struct Train;

impl Command for Train {
    const NAME: &'static str = "train";
    type Params = TrainParams;
    type Resolved = TrainCliConfig;

    fn resolve(p: TrainParams) -> CliResult<TrainCliConfig> {
        let dims = parse_list(p.dims.as_deref().unwrap_or("10,32,32,2"), "dims")?;
        if dims.len() < 2 || dims.iter().any(|d| *d < 1.0 || d.fract() != 0.0) {
            return usage("`dims` needs at least two positive integer widths");
        }
        let act = p.act.unwrap_or_else(|| "relu".into());
        let loss = p.loss.unwrap_or_else(|| "ce".into());
        let opt = p.opt.unwrap_or_else(|| "gd".into());
        let hvp = p.hvp.unwrap_or_else(|| "exact".into());
        if !["relu", "identity"].contains(&act.as_str()) {
            return usage(format!("`act` must be relu or identity, got `{act}`"));
        }
        if !["ce", "mse"].contains(&loss.as_str()) {
            return usage(format!("`loss` must be ce or mse, got `{loss}`"));
        }
        if !["exact", "fd"].contains(&hvp.as_str()) {
            return usage(format!("`hvp` must be exact or fd, got `{hvp}`"));
        }
        if let Err(e) = opt.parse::<OptimizerKind>() {
            return usage(e.to_string());
        }
        let mut interventions = p
            .intervene
            .unwrap_or_default()
            .iter()
            .map(|s| parse_intervention(s))
            .collect::<CliResult<Vec<_>>>()?;
        interventions.sort_by_key(Intervention::epoch);
        let cfg = TrainCliConfig {
            dims: dims.iter().map(|d| *d as usize).collect(),
            act,
            loss,
            opt,
            eta: p.eta.unwrap_or(2.0),
            epochs: p.epochs.unwrap_or(200),
            seed: p.seed.unwrap_or(0),
            data: parse_data(p.data.as_deref().unwrap_or("blobs"))?,
            interventions,
            diag_every: p.diag_every,
            hvp,
        };
        if cfg.epochs == 0 || cfg.diag_every == Some(0) {
            return usage("`epochs` and `diag-every` must be positive");
        }
        if let Err(e) = cfg.train_config().opt.validate() {
            return usage(e.to_string());
        }
        Ok(cfg)
    }

    fn seed(cfg: &TrainCliConfig) -> u64 {
        cfg.seed
    }

    fn run(cfg: &TrainCliConfig, out: &Path) -> CliResult<JobReport> {
        let data = match &cfg.data {
            DataSpec::Blobs { k, separation, seed } => Dataset::blobs(*k, cfg.dims[0], *separation, *seed)?,
            DataSpec::Csv { path } => Dataset::from_csv(path)?,
        };
        let hidden = if cfg.act == "relu" { Activation::Relu } else { Activation::Identity };
        let arch = MlpArch::with_hidden(cfg.dims.clone(), hidden)?;
        if arch.input_dim() != data.inputs.ncols() || arch.output_dim() != data.targets.ncols() {
            return Err(CliError::Failure(format!(
                "dims {:?} do not fit data with {} features and {} classes",
                cfg.dims,
                data.inputs.ncols(),
                data.targets.ncols()
            )));
        }
        let log = train(&MlpModel::init(arch, cfg.seed), &data, &cfg.train_config())?;
        let lines = log
            .records
            .iter()
            .map(|r| serde_json::to_string(r).map_err(|e| CliError::Failure(e.to_string())))
            .collect::<CliResult<Vec<_>>>()?;
        write_lines(&out.join("train.jsonl"), &lines)?;
        let s = log.summary();
        let summary: Vec<(String, String)> = vec![
            ("epochs_run".into(), s.epochs_run.to_string()),
            ("final_loss".into(), fmt_f64(s.final_loss)),
            ("max_lambda".into(), fmt_f64(s.max_lambda)),
            ("instability_epochs".into(), s.instability_epochs.to_string()),
            ("spearman_gamma_lambda".into(), s.spearman_gamma_lambda.map(fmt_f64).unwrap_or_default()),
            ("xi_positive".into(), s.xi_positive.to_string()),
            ("xi_negative".into(), s.xi_negative.to_string()),
            ("diverged".into(), s.diverged.to_string()),
        ];
        let header: Vec<&str> = summary.iter().map(|(k, _)| k.as_str()).collect();
        write_csv(&out.join("summary.csv"), &header, &[summary.iter().map(|(_, v)| v.clone()).collect()])?;
        let mut report = JobReport::ok(summary);
        if s.diverged {
            report.status = JobStatus::Diverged;
            report.warnings.push(format!("training diverged after {} epochs", s.epochs_run));
        }
        Ok(report)
    }
}

impl TrainCliConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: if self.loss == "ce" { TrainLoss::Ce } else { TrainLoss::Mse },
            optimizer: self.opt.parse().expect("validated optimizer"),
            opt: OptimizerConfig {
                eta: self.eta,
                ..OptimizerConfig::default()
            },
            epochs: self.epochs,
            seed: self.seed,
            diagnostics: DiagnosticsConfig {
                every: self.diag_every,
                hvp: if self.hvp == "exact" { HvpMethod::Exact } else { HvpMethod::FiniteDifference },
                ..DiagnosticsConfig::default()
            },
            interventions: self.interventions.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_and_intervention_specs() {
        assert!(matches!(parse_data("blobs").unwrap(), DataSpec::Blobs { k: 512, .. }));
        assert!(matches!(parse_data("blobs:64,3").unwrap(), DataSpec::Blobs { k: 64, .. }));
        assert!(parse_data("blobs:64").is_err());
        assert!(parse_data("moons").is_err());
        assert!(matches!(parse_intervention("5:0.1").unwrap(), Intervention::Eta { epoch: 5, .. }));
        assert!(matches!(parse_intervention("5:adam").unwrap(), Intervention::Optimizer { epoch: 5, .. }));
        assert!(parse_intervention("x:0.1").is_err());
    }

    #[test]
    fn mismatched_dims_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = TrainParams {
            dims: Some("4,8,3".into()),
            data: Some("blobs:16,2".into()),
            epochs: Some(2),
            ..Default::default()
        };
        let err = Train::run(&Train::resolve(p).unwrap(), dir.path()).unwrap_err();
        assert!(matches!(err, CliError::Failure(_)));
    }
}
