use std::path::Path;

use clap::Args;
use instabilitylab::dln::LossModel;
use instabilitylab::optim::{run_optimizer, DiagQuadratic, Dln2Problem, OptimizerConfig, OptimizerKind, Problem};
use instabilitylab::toytrain::{Activation, Dataset, HvpMethod, MlpArch, MlpModel, MlpProblem, TrainLoss};
use instabilitylab::{derive_seed, DVector};
use serde::{Deserialize, Serialize};

use super::{parse_list, Command};
use crate::config::{fmt_f64, usage, write_csv, CliResult, JobReport, JobStatus};

pub const HELP: &str = "\
Problems: quad1d:LAMBDA (L = lambda theta^2 / 2 from theta = 1), dln[:T1,T2]
(theta1 theta2 regressed to 0 from (T1, T2), default (-0.1, 10)) and toymlp
(4-8-2 ReLU network, cross-entropy on 64 blob points).

Output optim.csv columns:
  step           update index; row s is the state before update s
  loss           objective value
  theta_norm     Euclidean norm of the parameters
  lambda_eff     top curvature of the preconditioned Hessian (plain for gd/sgd)
  unstable_flag  1 when eta * lambda_eff > 2, else 0";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct OptimParams {
    /// gd, sgd, rmsprop, adam or clipped-ada.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opt: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Second-moment cap for clipped-ada.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_thresh: Option<f64>,
    /// Gradient-noise scale for sgd.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ProblemSpec {
    Quad1d { lambda: f64 },
    Dln { theta1: f64, theta2: f64 },
    Toymlp,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct OptimConfig {
    pub opt: String,
    pub eta: f64,
    /// `None` disables the cap.
    pub q_thresh: Option<f64>,
    pub alpha_noise: f64,
    pub problem: ProblemSpec,
    pub steps: usize,
    pub seed: u64,
}

impl OptimConfig {
    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            eta: self.eta,
            q_thresh: self.q_thresh.unwrap_or(f64::INFINITY),
            noise_scale_alpha: self.alpha_noise,
            ..OptimizerConfig::default()
        }
    }
}

fn parse_problem(spec: &str) -> CliResult<ProblemSpec> {
    let (name, arg) = spec.split_once(':').map_or((spec, None), |(n, a)| (n, Some(a)));
    match (name, arg) {
        ("quad1d", Some(a)) => {
            let lambda = parse_list(a, "problem")?;
            match lambda.as_slice() {
                [l] if *l > 0.0 => Ok(ProblemSpec::Quad1d { lambda: *l }),
                _ => usage("quad1d needs one positive curvature, e.g. quad1d:4"),
            }
        }
        ("dln", None) => Ok(ProblemSpec::Dln { theta1: -0.1, theta2: 10.0 }),
        ("dln", Some(a)) => match parse_list(a, "problem")?.as_slice() {
            [t1, t2] => Ok(ProblemSpec::Dln { theta1: *t1, theta2: *t2 }),
            _ => usage("dln takes two initial parameters, e.g. dln:-0.1,10"),
        },
        ("toymlp", None) => Ok(ProblemSpec::Toymlp),
        _ => usage(format!("`problem` must be quad1d:LAMBDA, dln[:T1,T2] or toymlp, got `{spec}`")),
    }
}

pub struct OptimCompare;

impl Command for OptimCompare {
    const NAME: &'static str = "optim-compare";
    type Params = OptimParams;
    type Resolved = OptimConfig;

    fn resolve(p: OptimParams) -> CliResult<OptimConfig> {
        let opt = p.opt.unwrap_or_else(|| "adam".into());
        if let Err(e) = opt.parse::<OptimizerKind>() {
            return usage(e.to_string());
        }
        let cfg = OptimConfig {
            opt,
            eta: p.eta.unwrap_or(0.1),
            q_thresh: p.q_thresh,
            alpha_noise: p.alpha_noise.unwrap_or(0.0),
            problem: parse_problem(p.problem.as_deref().unwrap_or("quad1d:4"))?,
            steps: p.steps.unwrap_or(200),
            seed: p.seed.unwrap_or(0),
        };
        if let Err(e) = cfg.optimizer().validate() {
            return usage(e.to_string());
        }
        Ok(cfg)
    }

    fn seed(cfg: &OptimConfig) -> u64 {
        cfg.seed
    }

    fn run(cfg: &OptimConfig, out: &Path) -> CliResult<JobReport> {
        let kind: OptimizerKind = cfg.opt.parse()?;
        let run = |problem: &dyn Problem, theta0: DVector<f64>| run_optimizer(kind, &cfg.optimizer(), problem, &theta0, cfg.steps, cfg.seed);
        let (records, _) = match &cfg.problem {
            ProblemSpec::Quad1d { lambda } => run(&DiagQuadratic { lambdas: vec![*lambda] }, DVector::from_element(1, 1.0))?,
            ProblemSpec::Dln { theta1, theta2 } => run(
                &Dln2Problem {
                    loss: LossModel::quadratic(0.0),
                },
                DVector::from_vec(vec![*theta1, *theta2]),
            )?,
            ProblemSpec::Toymlp => {
                let data = Dataset::blobs(64, 4, 2.0, derive_seed(cfg.seed, 1))?;
                let arch = MlpArch::with_hidden(vec![4, 8, 2], Activation::Relu)?;
                let theta0 = MlpModel::init(arch.clone(), derive_seed(cfg.seed, 2)).params;
                let problem = MlpProblem {
                    arch: &arch,
                    data: &data,
                    loss: TrainLoss::Ce,
                    method: HvpMethod::Exact,
                    lanczos_order: 20,
                    seed: derive_seed(cfg.seed, 3),
                };
                run(&problem, theta0)?
            }
        };
        let rows: Vec<Vec<String>> = records
            .iter()
            .map(|r| {
                vec![
                    r.step.to_string(),
                    fmt_f64(r.loss),
                    fmt_f64(r.theta_norm),
                    fmt_f64(r.lambda_eff),
                    u8::from(r.unstable).to_string(),
                ]
            })
            .collect();
        write_csv(&out.join("optim.csv"), &["step", "loss", "theta_norm", "lambda_eff", "unstable_flag"], &rows)?;
        let last = records.last().expect("initial state recorded");
        let unstable = records.iter().filter(|r| r.unstable).count();
        let mut report = JobReport::ok(vec![
            ("final_loss".into(), fmt_f64(last.loss)),
            ("final_lambda_eff".into(), fmt_f64(last.lambda_eff)),
            ("unstable_steps".into(), unstable.to_string()),
        ]);
        if !(last.loss.is_finite() && last.loss.abs() < 1e30) {
            report.status = JobStatus::Diverged;
            report.warnings.push(format!("{} diverged at step {}", cfg.opt, last.step));
        }
        Ok(report)
    }
}
