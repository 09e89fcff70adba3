use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Gamma as GammaCdf, Normal as NormalCdf};

use super::AlphaFn;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Law of `X₀`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitDist {
    Point { u: f64 },
    Normal { mean: f64, sd: f64 },
    /// Gamma(`shape`, `scale`) shifted so its mode sits at `mode`; right-skewed. Needs `shape > 1`.
    SkewGamma { shape: f64, scale: f64, mode: f64 },
    /// Equal mixture of `N(left, sd²)` and `N(right, sd²)`.
    Bimodal { left: f64, right: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InitDist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Point { u } => u.is_finite(),
            Self::Normal { sd, .. } | Self::Bimodal { sd, .. } => sd > 0.0,
            Self::SkewGamma { shape, scale, .. } => shape > 1.0 && scale > 0.0,
            Self::Uniform { lo, hi } => hi > lo,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid initial distribution {self:?}")))
        }
    }

    fn gamma_shift(shape: f64, scale: f64, mode: f64) -> f64 {
        mode - (shape - 1.0) * scale
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Point { u } => u,
            Self::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            Self::SkewGamma { shape, scale, mode } => {
                Self::gamma_shift(shape, scale, mode) + Gamma::new(shape, scale).expect("validated").sample(rng)
            }
            Self::Bimodal { left, right, sd } => {
                let centre = if rng.random::<bool>() { right } else { left };
                Normal::new(centre, sd).expect("validated").sample(rng)
            }
            Self::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Point { u } => {
                if x >= u {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Normal { mean, sd } => NormalCdf::new(mean, sd).expect("validated").cdf(x),
            Self::SkewGamma { shape, scale, mode } => {
                let y = x - Self::gamma_shift(shape, scale, mode);
                if y <= 0.0 {
                    0.0
                } else {
                    GammaCdf::new(shape, 1.0 / scale).expect("validated").cdf(y)
                }
            }
            Self::Bimodal { left, right, sd } => {
                0.5 * (NormalCdf::new(left, sd).expect("validated").cdf(x) + NormalCdf::new(right, sd).expect("validated").cdf(x))
            }
            Self::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// `inf{x : F(x) ≥ p}` for `p ∈ (0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Self::Point { u } => u,
            Self::Normal { mean, sd } => NormalCdf::new(mean, sd).expect("validated").inverse_cdf(p),
            Self::SkewGamma { shape, scale, mode } => {
                Self::gamma_shift(shape, scale, mode) + GammaCdf::new(shape, 1.0 / scale).expect("validated").inverse_cdf(p)
            }
            Self::Bimodal { left, right, sd } => {
                let (mut lo, mut hi) = (left.min(right) - 40.0 * sd, left.max(right) + 40.0 * sd);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) >= p {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
            Self::Uniform { lo, hi } => lo + p * (hi - lo),
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// `k` equal-weight atoms at the midpoint quantiles `(i + ½)/k`; a point mass gives one atom.
    pub fn atoms(&self, k: usize) -> Vec<f64> {
        match *self {
            Self::Point { u } => vec![u],
            _ => (0..k.max(1)).map(|i| self.quantile((i as f64 + 0.5) / k.max(1) as f64)).collect(),
        }
    }

    /// Essential supremum when finite.
    pub fn ess_sup(&self) -> Option<f64> {
        match *self {
            Self::Point { u } => Some(u),
            Self::Uniform { hi, .. } => Some(hi),
            _ => None,
        }
    }

    /// Mode of a unimodal law.
    pub fn mode(&self) -> Option<f64> {
        match *self {
            Self::Point { u } => Some(u),
            Self::Normal { mean, .. } => Some(mean),
            Self::SkewGamma { mode, .. } => Some(mode),
            Self::Bimodal { .. } | Self::Uniform { .. } => None,
        }
    }

    pub fn is_unimodal_continuous(&self) -> bool {
        matches!(self, Self::Normal { .. } | Self::SkewGamma { .. })
    }

    /// Unimodal, counting a point mass as the degenerate case.
    pub fn is_unimodal(&self) -> bool {
        self.mode().is_some()
    }
}

/// Monte Carlo configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkConfig {
    pub alpha: AlphaFn,
    pub init: InitDist,
    pub horizon: usize,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Times at which the ensemble is recorded; empty means every even time.
    pub checkpoints: Vec<usize>,
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 || self.horizon % 2 != 0 {
            return Err(Error::InvalidInput(format!("horizon must be even and >= 2, got {}", self.horizon)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be >= 1".into()));
        }
        if let Some(&t) = self.checkpoints.iter().find(|&&t| t > self.horizon) {
            return Err(Error::InvalidInput(format!("checkpoint {t} beyond horizon")));
        }
        self.init.validate()
    }

    pub fn checkpoint_times(&self) -> Vec<usize> {
        let mut ts: Vec<usize> = if self.checkpoints.is_empty() {
            (0..=self.horizon).step_by(2).collect()
        } else {
            self.checkpoints.clone()
        };
        ts.sort_unstable();
        ts.dedup();
        ts
    }
}

/// Recorded samples; `checkpoints[t][i]` is path `i` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub checkpoints: BTreeMap<usize, Vec<f64>>,
}

impl PathEnsemble {
    pub fn at(&self, t: usize) -> Option<&[f64]> {
        self.checkpoints.get(&t).map(|v| v.as_slice())
    }
}

fn path_seed(master: u64, path: usize) -> u64 {
    derive_seed(master, path as u64)
}

struct SignStream {
    rng: rand_chacha::ChaCha8Rng,
    word: u64,
    left: u32,
}

impl SignStream {
    fn new(master: u64, path: usize) -> Self {
        Self {
            rng: rng_from_seed(derive_seed(path_seed(master, path), 1)),
            word: 0,
            left: 0,
        }
    }

    fn next_plus(&mut self) -> bool {
        if self.left == 0 {
            self.word = self.rng.next_u64();
            self.left = 64;
        }
        let bit = self.word & 1 == 1;
        self.word >>= 1;
        self.left -= 1;
        bit
    }
}

/// Sign sequence used by path `path` (`true` is `+1`).
pub fn path_signs(master_seed: u64, path: usize, horizon: usize) -> Vec<bool> {
    let mut s = SignStream::new(master_seed, path);
    (0..horizon).map(|_| s.next_plus()).collect()
}

/// Simulates `n_paths` independent paths; path `i` draws `X₀` and its signs from
/// substreams of `derive_seed(master_seed, i)`, so output does not depend on scheduling.
pub fn simulate_ensemble(cfg: &WalkConfig) -> Result<PathEnsemble> {
    cfg.validate()?;
    let times = cfg.checkpoint_times();
    let rows: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut init_rng = rng_from_seed(derive_seed(path_seed(cfg.master_seed, i), 0));
            let mut x = cfg.init.sample(&mut init_rng);
            let mut signs = SignStream::new(cfg.master_seed, i);
            let mut out = Vec::with_capacity(times.len());
            let mut next = 0;
            for t in 0..=cfg.horizon {
                if next < times.len() && times[next] == t {
                    out.push(x);
                    next += 1;
                }
                if t == cfg.horizon || next == times.len() {
                    break;
                }
                let a = cfg.alpha.checked(x)?;
                x = if signs.next_plus() { x + a } else { x - a };
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut checkpoints = BTreeMap::new();
    for (k, &t) in times.iter().enumerate() {
        checkpoints.insert(t, rows.iter().map(|r| r[k]).collect());
    }
    Ok(PathEnsemble {
        n_paths: cfg.n_paths,
        checkpoints,
    })
}
