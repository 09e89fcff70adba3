use std::path::Path;

use clap::Args;
use instabilitylab::dln::{gamma_beta, gd_trajectory, Dln2State, LossModel, TrajectoryStatus};
use serde::{Deserialize, Serialize};

use super::{parse_grid, Command};
use crate::config::{fmt_f64, required, usage, write_csv, CliResult, JobReport, JobStatus};

pub const HELP: &str = "\
Two-parameter diagonal linear network f = theta1 * theta2 trained by exact GD.

Output dln.csv columns (one row per eta and step):
  eta              step size of this trajectory
  step             iteration, 0 is the initial state
  theta1, theta2   parameters
  loss             z(theta1 theta2)
  lambda1          top Hessian eigenvalue
  angle            atan2(v1, v2) of the top eigenvector, radians
  beta             rotation invariant |z''(theta2^2 - theta1^2) / (2(z' + z'' theta1 theta2))|
  R                beta + sqrt(beta^2 + 1)
  gamma_beta_pred  predicted one-step growth factor of beta at this state";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DlnParams {
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta2: Option<f64>,
    /// quad, mse or bce.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    /// Regression target (quad, mse) or label in {0, 1} (bce).
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    /// Single step size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Step-size grid lo:hi:n.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_grid: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Unused by the dynamics; recorded for sweeps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DlnConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub loss: String,
    pub target: f64,
    pub etas: Vec<f64>,
    pub steps: usize,
    pub seed: u64,
}

impl DlnConfig {
    fn loss_model(&self) -> CliResult<LossModel> {
        Ok(match self.loss.as_str() {
            "quad" => LossModel::quadratic(self.target),
            "mse" => LossModel::mse(self.target),
            _ => LossModel::binary_ce(self.target)?,
        })
    }
}

pub struct Dln;

impl Command for Dln {
    const NAME: &'static str = "dln";
    type Params = DlnParams;
    type Resolved = DlnConfig;

    fn resolve(p: DlnParams) -> CliResult<DlnConfig> {
        let loss = p.loss.unwrap_or_else(|| "quad".into());
        if !["quad", "mse", "bce"].contains(&loss.as_str()) {
            return usage(format!("`loss` must be quad, mse or bce, got `{loss}`"));
        }
        let etas = match (p.eta, p.eta_grid) {
            (Some(_), Some(_)) => return usage("`eta` and `eta-grid` are mutually exclusive"),
            (Some(e), None) => vec![e],
            (None, Some(g)) => parse_grid(&g, "eta-grid")?,
            (None, None) => return usage("missing required key `eta` (or `eta-grid`)"),
        };
        if etas.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return usage("step sizes must be positive and finite");
        }
        let cfg = DlnConfig {
            theta1: required(p.theta1, "theta1")?,
            theta2: required(p.theta2, "theta2")?,
            target: p.target.unwrap_or(if loss == "bce" { 1.0 } else { 0.0 }),
            loss,
            etas,
            steps: p.steps.unwrap_or(100),
            seed: p.seed.unwrap_or(0),
        };
        if let Err(e) = cfg.loss_model() {
            return usage(e.to_string());
        }
        Ok(cfg)
    }

    fn seed(cfg: &DlnConfig) -> u64 {
        cfg.seed
    }

    fn run(cfg: &DlnConfig, out: &Path) -> CliResult<JobReport> {
        let loss = cfg.loss_model()?;
        let s0 = Dln2State::new(cfg.theta1, cfg.theta2);
        let mut rows = Vec::new();
        let mut diverged = Vec::new();
        let mut last_loss = f64::NAN;
        let mut last_r = f64::NAN;
        for &eta in &cfg.etas {
            let traj = gd_trajectory(s0, &loss, eta, cfg.steps);
            if traj.status == TrajectoryStatus::Diverged {
                diverged.push(eta);
            }
            for pt in &traj.points {
                let pred = gamma_beta(&pt.state, &loss, eta).map(fmt_f64).unwrap_or_default();
                rows.push(vec![
                    fmt_f64(eta),
                    pt.step.to_string(),
                    fmt_f64(pt.state.theta1),
                    fmt_f64(pt.state.theta2),
                    fmt_f64(pt.loss),
                    fmt_f64(pt.lambda1),
                    fmt_f64(pt.angle),
                    fmt_f64(pt.beta),
                    fmt_f64(pt.r),
                    pred,
                ]);
            }
            let last = traj.points.last().expect("initial point recorded");
            (last_loss, last_r) = (last.loss, last.r);
        }
        write_csv(
            &out.join("dln.csv"),
            &["eta", "step", "theta1", "theta2", "loss", "lambda1", "angle", "beta", "R", "gamma_beta_pred"],
            &rows,
        )?;
        let mut report = JobReport::ok(vec![
            ("final_loss".into(), fmt_f64(last_loss)),
            ("final_R".into(), fmt_f64(last_r)),
            ("diverged_etas".into(), diverged.len().to_string()),
        ]);
        if !diverged.is_empty() {
            report.status = JobStatus::Diverged;
            let list: Vec<String> = diverged.iter().map(|e| fmt_f64(*e)).collect();
            report.warnings.push(format!("trajectory diverged for eta in [{}]", list.join(", ")));
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eta: f64) -> DlnParams {
        DlnParams {
            theta1: Some(-0.1),
            theta2: Some(10.0),
            eta: Some(eta),
            steps: Some(30),
            ..Default::default()
        }
    }

    #[test]
    fn stable_and_divergent_runs() {
        let dir = tempfile::tempdir().unwrap();
        let ok = Dln::run(&Dln::resolve(params(0.005)).unwrap(), dir.path()).unwrap();
        assert_eq!(ok.status, JobStatus::Ok);
        let bad = Dln::run(&Dln::resolve(params(5.0)).unwrap(), dir.path()).unwrap();
        assert_eq!(bad.status, JobStatus::Diverged);
        assert_eq!(bad.warnings.len(), 1);
    }

    #[test]
    fn missing_theta_is_reported() {
        let p = DlnParams {
            theta1: None,
            ..params(0.1)
        };
        let err = Dln::resolve(p).unwrap_err().to_string();
        assert!(err.contains("missing required key `theta1`"), "{err}");
    }
}
