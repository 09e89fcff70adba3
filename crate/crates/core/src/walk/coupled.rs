//! Coupled curvature/instability system with absorption at `δ ≤ 0`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::stats::quantile_sorted;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Positive increasing map `δ ↦ f_{log U}(δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FLogU {
    /// `kδ`.
    Linear { k: f64 },
}

impl FLogU {
    pub fn eval(&self, delta: f64) -> f64 {
        match *self {
            Self::Linear { k } => k * delta,
        }
    }
}

/// Nondecreasing map `U ↦ f_λ(U)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FLambda {
    /// `aU^b`.
    Power { a: f64, b: f64 },
}

impl FLambda {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Self::Power { a, b } => a * u.powf(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledConfig {
    pub f_log_u: FLogU,
    pub f_lambda: FLambda,
    pub eta: f64,
    /// Stability constant, 2 for GD.
    pub c_t: f64,
    /// Half-width of the uniform `ζ` noise; 0 disables it.
    pub zeta: f64,
    pub u0: f64,
}

impl CoupledConfig {
    /// `δ = η f_λ(U) − C + ηζ`.
    pub fn surplus(&self, u: f64, zeta: f64) -> f64 {
        self.eta * self.f_lambda.eval(u) - self.c_t + self.eta * zeta
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u0 > 0.0) || !(self.eta > 0.0) || self.zeta < 0.0 {
            return Err(Error::InvalidInput("coupled system needs U0 > 0, eta > 0, zeta >= 0".into()));
        }
        if self.surplus(self.u0, 0.0) - self.eta * self.zeta <= 0.0 {
            return Err(Error::InvalidInput("initial surplus must be positive for every noise draw".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledRow {
    pub t: usize,
    pub u: f64,
    pub delta: f64,
    pub lambda1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledTrajectory {
    pub rows: Vec<CoupledRow>,
    /// First time with `δ_t ≤ 0`; `U` is frozen from then on.
    pub exit_time: Option<usize>,
    /// `U` overflowed; the trajectory is truncated there.
    pub diverged: bool,
}

/// Iterates `log U_{t+1} = log U_t + ξ_t f_{log U}(δ_t)` until absorption or `horizon`.
pub fn simulate_coupled(cfg: &CoupledConfig, horizon: usize, seed: u64) -> Result<CoupledTrajectory> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut u = cfg.u0;
    let mut rows = Vec::with_capacity(horizon + 1);
    let mut exit_time = None;
    let mut diverged = false;
    for t in 0..=horizon {
        if !u.is_finite() {
            diverged = true;
            break;
        }
        let zeta = if cfg.zeta > 0.0 { rng.random_range(-cfg.zeta..=cfg.zeta) } else { 0.0 };
        let delta = if exit_time.is_some() { rows.last().map(|r: &CoupledRow| r.delta).unwrap_or(0.0) } else { cfg.surplus(u, zeta) };
        rows.push(CoupledRow {
            t,
            u,
            delta,
            lambda1: cfg.f_lambda.eval(u),
        });
        if exit_time.is_none() && delta <= 0.0 {
            exit_time = Some(t);
        }
        if exit_time.is_none() {
            let xi = if rng.random::<bool>() { 1.0 } else { -1.0 };
            u *= (xi * cfg.f_log_u.eval(delta)).exp();
        }
    }
    Ok(CoupledTrajectory { rows, exit_time, diverged })
}

/// Median of `log U_t` over `n` seeded trajectories at each `t ≤ horizon`; overflowed paths count as `+∞`.
pub fn coupled_median_log_u(cfg: &CoupledConfig, horizon: usize, n: usize, master_seed: u64) -> Result<Vec<f64>> {
    let trajs: Vec<CoupledTrajectory> = (0..n)
        .into_par_iter()
        .map(|i| simulate_coupled(cfg, horizon, derive_seed(master_seed, i as u64)))
        .collect::<Result<_>>()?;
    Ok((0..=horizon)
        .map(|t| {
            let mut v: Vec<f64> = trajs
                .iter()
                .map(|tr| tr.rows.get(t).map_or(f64::INFINITY, |r| r.u.ln()))
                .collect();
            v.sort_by(f64::total_cmp);
            quantile_sorted(&v, 0.5)
        })
        .collect())
}
