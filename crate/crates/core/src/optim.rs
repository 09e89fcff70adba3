//! First-order optimizers and adaptive-preconditioner stability diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dln::{eig2_top, hessian2, Dln2State, LossModel};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Hyperparameters shared by every optimizer in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Elementwise cap on the second moment read by Clipped-Ada; `f64::INFINITY` disables it.
    pub q_thresh: f64,
    /// Gradient-noise scale `α` of noise-scaled SGD.
    pub noise_scale_alpha: f64,
    pub bias_correction: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            q_thresh: f64::INFINITY,
            noise_scale_alpha: 0.0,
            bias_correction: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let moments_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !(self.eta > 0.0) || !(self.epsilon > 0.0) || !(self.q_thresh > 0.0) || !moments_ok || self.noise_scale_alpha < 0.0 {
            return Err(Error::InvalidInput(format!("invalid optimizer config {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: DVector<f64>,
    pub q: DVector<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            m: DVector::zeros(n),
            q: DVector::zeros(n),
            step_count: 0,
        }
    }
}

/// `θ − η∇L`.
pub fn gd_step(theta: &DVector<f64>, grad: &DVector<f64>, eta: f64) -> DVector<f64> {
    theta - grad * eta
}

/// `θ − η(∇L + αξ)`.
pub fn sgd_alpha_step(theta: &DVector<f64>, grad: &DVector<f64>, xi: &DVector<f64>, alpha: f64, eta: f64) -> DVector<f64> {
    theta - (grad + xi * alpha) * eta
}

/// `η (N/B) α² σ̄²`, proportional to the effective SGD temperature.
pub fn effective_temperature(eta: f64, n: usize, b: usize, alpha: f64, sigma_bar_sq: f64) -> Result<f64> {
    if b == 0 || b > n || !(eta > 0.0) || sigma_bar_sq < 0.0 {
        return Err(Error::InvalidInput("effective temperature needs 0 < B <= N and eta > 0".into()));
    }
    Ok(eta * (n as f64 / b as f64) * alpha * alpha * sigma_bar_sq)
}

fn corrections(cfg: &OptimizerConfig, t: u64) -> (f64, f64) {
    if cfg.bias_correction {
        let t = t.min(i32::MAX as u64) as i32;
        (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
    } else {
        (1.0, 1.0)
    }
}

fn moment_update(state: &OptimizerState, grad: &DVector<f64>, cfg: &OptimizerConfig) -> OptimizerState {
    let m = state.m.zip_map(grad, |m, g| cfg.beta1 * m + (1.0 - cfg.beta1) * g);
    let q = state.q.zip_map(grad, |q, g| cfg.beta2 * q + (1.0 - cfg.beta2) * (g * g));
    OptimizerState {
        m,
        q,
        step_count: state.step_count + 1,
    }
}

/// Second moment as read by the update: bias-corrected, then capped at `q_thresh`.
pub fn read_second_moment(state: &OptimizerState, cfg: &OptimizerConfig) -> DVector<f64> {
    let (_, c2) = corrections(cfg, state.step_count);
    state.q.map(|q| (q / c2).min(cfg.q_thresh))
}

/// `θ − η m̂/(√q̂_mod + ε)` with `q̂_mod = min(q̂, q_thresh)`; the stored `q` is never clipped.
pub fn clipped_ada_step(state: &OptimizerState, theta: &DVector<f64>, grad: &DVector<f64>, cfg: &OptimizerConfig) -> (OptimizerState, DVector<f64>) {
    let next = moment_update(state, grad, cfg);
    let (c1, _) = corrections(cfg, next.step_count);
    let q_mod = read_second_moment(&next, cfg);
    let mut theta_new = theta.clone();
    for i in 0..theta.len() {
        theta_new[i] = theta[i] - cfg.eta * (next.m[i] / c1) / (q_mod[i].sqrt() + cfg.epsilon);
    }
    (next, theta_new)
}

/// Adam: Clipped-Ada without a cap.
pub fn adam_step(state: &OptimizerState, theta: &DVector<f64>, grad: &DVector<f64>, cfg: &OptimizerConfig) -> (OptimizerState, DVector<f64>) {
    let uncapped = OptimizerConfig {
        q_thresh: f64::INFINITY,
        ..*cfg
    };
    clipped_ada_step(state, theta, grad, &uncapped)
}

/// RMSprop, written independently of the Adam path: `θ − η g/(√q̂ + ε)`.
///
/// `β₁` is ignored and `m` is set to the raw gradient.
pub fn rmsprop_step(state: &OptimizerState, theta: &DVector<f64>, grad: &DVector<f64>, cfg: &OptimizerConfig) -> (OptimizerState, DVector<f64>) {
    let step_count = state.step_count + 1;
    let correction = if cfg.bias_correction {
        1.0 - cfg.beta2.powi(step_count.min(i32::MAX as u64) as i32)
    } else {
        1.0
    };
    let mut q = state.q.clone();
    let mut theta_new = theta.clone();
    for i in 0..theta.len() {
        let g = grad[i];
        q[i] = cfg.beta2 * q[i] + (1.0 - cfg.beta2) * (g * g);
        theta_new[i] = theta[i] - cfg.eta * g / ((q[i] / correction).sqrt() + cfg.epsilon);
    }
    (
        OptimizerState {
            m: grad.clone(),
            q,
            step_count,
        },
        theta_new,
    )
}

/// Diagonal preconditioner reproducing the Adam update: `1/(√q + ε)`.
pub fn precond_diag_update(q: &DVector<f64>, epsilon: f64) -> DVector<f64> {
    q.map(|v| 1.0 / (v.sqrt() + epsilon))
}

/// Preconditioner `(q + ε)^{−1/2}` used for the effective Hessian and its bounds.
pub fn precond_diag(q: &DVector<f64>, epsilon: f64) -> DVector<f64> {
    q.map(|v| (v + epsilon).powf(-0.5))
}

/// `Q^{1/2} H Q^{1/2}` with `Q = diag((q + ε)^{−1/2})`.
pub fn effective_hessian(h: &DMatrix<f64>, q: &DVector<f64>, epsilon: f64) -> DMatrix<f64> {
    let s = precond_diag(q, epsilon).map(f64::sqrt);
    DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| s[i] * h[(i, j)] * s[j])
}

/// `(η λ_max(H) min_i Qᵢᵢ, η λ_max(H) max_i Qᵢᵢ)`, valid when `λ_max(H) > 0`.
pub fn sandwich_bounds(lambda_max: f64, q: &DVector<f64>, epsilon: f64, eta: f64) -> (f64, f64) {
    let p = precond_diag(q, epsilon);
    (eta * lambda_max * p.min(), eta * lambda_max * p.max())
}

/// `λ_max / Σᵢ v₁ᵢ² (q_mod,i + ε)`.
pub fn effective_curvature(lambda_max: f64, v1: &DVector<f64>, q_mod: &DVector<f64>, epsilon: f64) -> f64 {
    let denom: f64 = v1.iter().zip(q_mod.iter()).map(|(v, q)| v * v * (q + epsilon)).sum();
    lambda_max / denom
}

/// Per-coordinate step magnitude `η|m̂|/(√min(q̂, q_thresh) + ε)` for fixed moments.
pub fn step_magnitudes(m_hat: &DVector<f64>, q_hat: &DVector<f64>, cfg: &OptimizerConfig) -> DVector<f64> {
    m_hat.zip_map(q_hat, |m, q| cfg.eta * m.abs() / (q.min(cfg.q_thresh).sqrt() + cfg.epsilon))
}

/// Optimizer family for the generic driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OptimizerKind {
    Gd,
    Sgd,
    Rmsprop,
    Adam,
    ClippedAda,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gd" => Self::Gd,
            "sgd" => Self::Sgd,
            "rmsprop" => Self::Rmsprop,
            "adam" => Self::Adam,
            "clipped-ada" => Self::ClippedAda,
            other => return Err(Error::InvalidInput(format!("unknown optimizer {other}"))),
        })
    }
}

/// Differentiable objective for the driver.
pub trait Problem {
    fn dim(&self) -> usize;
    fn loss(&self, theta: &DVector<f64>) -> f64;
    fn grad(&self, theta: &DVector<f64>) -> DVector<f64>;
    /// Leading Hessian eigenpair at `theta`.
    fn top_curvature(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
}

/// `L = ½ Σ λᵢ θᵢ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagQuadratic {
    pub lambdas: Vec<f64>,
}

impl Problem for DiagQuadratic {
    fn dim(&self) -> usize {
        self.lambdas.len()
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        0.5 * self.lambdas.iter().zip(theta.iter()).map(|(l, t)| l * t * t).sum::<f64>()
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(theta.len(), self.lambdas.iter().zip(theta.iter()).map(|(l, t)| l * t))
    }

    fn top_curvature(&self, _theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (k, &l) = self
            .lambdas
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .ok_or_else(|| Error::InvalidInput("empty quadratic".into()))?;
        let mut v = DVector::zeros(self.lambdas.len());
        v[k] = 1.0;
        Ok((l, v))
    }
}

/// Two-parameter linear network `L = z(θ₁θ₂)` with closed-form curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dln2Problem {
    pub loss: LossModel,
}

impl Problem for Dln2Problem {
    fn dim(&self) -> usize {
        2
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        self.loss.z(theta[0] * theta[1])
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let zp = self.loss.z_prime(theta[0] * theta[1]);
        DVector::from_vec(vec![zp * theta[1], zp * theta[0]])
    }

    fn top_curvature(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (l, v) = eig2_top(&hessian2(&Dln2State::new(theta[0], theta[1]), &self.loss));
        Ok((l, DVector::from_vec(v.to_vec())))
    }
}

/// One driver record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunRecord {
    pub step: usize,
    pub loss: f64,
    pub theta_norm: f64,
    pub lambda_eff: f64,
    pub unstable: bool,
}

/// Stateful optimizer: kind, hyperparameters, moments and the SGD noise stream.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub cfg: OptimizerConfig,
    pub state: OptimizerState,
    rng: rand_chacha::ChaCha8Rng,
}

impl Optimizer {
    /// SGD noise is `ξ ~ N(0, I)` drawn from `seed`.
    pub fn new(kind: OptimizerKind, cfg: OptimizerConfig, dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            kind,
            cfg,
            state: OptimizerState::new(dim),
            rng: rng_from_seed(seed),
        })
    }

    pub fn step(&mut self, theta: &DVector<f64>, grad: &DVector<f64>) -> DVector<f64> {
        let (state, next) = match self.kind {
            OptimizerKind::Gd => return gd_step(theta, grad, self.cfg.eta),
            OptimizerKind::Sgd => {
                let rng = &mut self.rng;
                let xi = DVector::from_fn(theta.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                return sgd_alpha_step(theta, grad, &xi, self.cfg.noise_scale_alpha, self.cfg.eta);
            }
            OptimizerKind::Rmsprop => rmsprop_step(&self.state, theta, grad, &self.cfg),
            OptimizerKind::Adam => adam_step(&self.state, theta, grad, &self.cfg),
            OptimizerKind::ClippedAda => clipped_ada_step(&self.state, theta, grad, &self.cfg),
        };
        self.state = state;
        next
    }

    /// `λ_max` for GD/SGD and before the first adaptive step, else the effective curvature.
    pub fn lambda_eff(&self, lambda_max: f64, v1: &DVector<f64>) -> f64 {
        match self.kind {
            OptimizerKind::Gd | OptimizerKind::Sgd => lambda_max,
            _ if self.state.step_count == 0 => lambda_max,
            OptimizerKind::Rmsprop | OptimizerKind::Adam => {
                let uncapped = OptimizerConfig {
                    q_thresh: f64::INFINITY,
                    ..self.cfg
                };
                effective_curvature(lambda_max, v1, &read_second_moment(&self.state, &uncapped), self.cfg.epsilon)
            }
            OptimizerKind::ClippedAda => effective_curvature(lambda_max, v1, &read_second_moment(&self.state, &self.cfg), self.cfg.epsilon),
        }
    }
}

/// Runs `steps` updates from `theta0`, recording before each update and after the last.
pub fn run_optimizer(
    kind: OptimizerKind,
    cfg: &OptimizerConfig,
    problem: &dyn Problem,
    theta0: &DVector<f64>,
    steps: usize,
    seed: u64,
) -> Result<(Vec<RunRecord>, DVector<f64>)> {
    if theta0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: theta0.len(),
        });
    }
    let mut opt = Optimizer::new(kind, *cfg, theta0.len(), seed)?;
    let mut theta = theta0.clone();
    let mut records = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (lambda, v1) = problem.top_curvature(&theta)?;
        let lambda_eff = opt.lambda_eff(lambda, &v1);
        let loss = problem.loss(&theta);
        records.push(RunRecord {
            step,
            loss,
            theta_norm: theta.norm(),
            lambda_eff,
            unstable: cfg.eta * lambda_eff > 2.0,
        });
        if !loss.is_finite() || step == steps {
            break;
        }
        theta = opt.step(&theta, &problem.grad(&theta));
    }
    Ok((records, theta))
}

/// Whether GD on `½λθ²` from `theta0` strictly decreases the loss at each of `steps` steps.
///
/// Landing exactly on the minimum counts as a decrease.
pub fn gd_monotone_decrease(lambda: f64, eta: f64, theta0: f64, steps: usize) -> bool {
    let mut theta = theta0;
    let mut loss = 0.5 * lambda * theta * theta;
    for _ in 0..steps {
        theta -= eta * lambda * theta;
        let next = 0.5 * lambda * theta * theta;
        if next == 0.0 {
            return true;
        }
        if !(next < loss) {
            return false;
        }
        loss = next;
    }
    true
}
