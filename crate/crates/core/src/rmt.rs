//! Spiked Wigner model of the minibatch Hessian.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};
use crate::spectral::{top_eigenpair, DenseOracle};

/// Entry-variance convention for the noise matrix `Ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NoiseScaling {
    /// Off-diagonal variance `σ²/P`, diagonal `2σ²/P`: bulk edge of `Ξ` at `±2σ`.
    PerDimension,
    /// Off-diagonal variance `σ²`, diagonal `2σ²`: bulk edge grows like `2σ√P`.
    PerEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpikedModelConfig {
    pub dim: usize,
    pub batch: usize,
    pub sigma: f64,
    pub lambda1: f64,
    pub seed: u64,
    pub scaling: NoiseScaling,
}

impl SpikedModelConfig {
    pub fn new(dim: usize, batch: usize, sigma: f64, lambda1: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            dim,
            batch,
            sigma,
            lambda1,
            seed,
            scaling: NoiseScaling::PerDimension,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `σ = 0` is accepted as the noiseless limit.
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.batch == 0 || !(self.sigma >= 0.0) || !self.sigma.is_finite() || !(self.lambda1 > 0.0) {
            return Err(Error::InvalidInput(format!("invalid spiked model {self:?}")));
        }
        Ok(())
    }

    /// Noise scale `s = σ/√B` after minibatch averaging.
    pub fn noise_scale(&self) -> f64 {
        self.sigma / (self.batch as f64).sqrt()
    }
}

/// Squared overlap `1 − σ²/(Bλ₁²)` when `λ₁ > 2σ/√B`, else 0.
pub fn overlap_formula(lambda1: f64, sigma: f64, batch: usize) -> f64 {
    let b = batch as f64;
    if lambda1 > 2.0 * sigma / b.sqrt() {
        1.0 - sigma * sigma / (b * lambda1 * lambda1)
    } else {
        0.0
    }
}

/// Critical spike `σ/√B` at which an outlier detaches from a semicircle of radius `2σ/√B`.
pub fn bbp_threshold(sigma: f64, batch: usize) -> f64 {
    sigma / (batch as f64).sqrt()
}

/// Symmetric Gaussian Wigner matrix scaled by `sigma`.
pub fn sample_wigner(p: usize, sigma: f64, scaling: NoiseScaling, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let sd = match scaling {
        NoiseScaling::PerDimension => sigma / (p as f64).sqrt(),
        NoiseScaling::PerEntry => sigma,
    };
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p {
        m[(i, i)] = std::f64::consts::SQRT_2 * sd * rng.sample::<f64, _>(StandardNormal);
        for j in (i + 1)..p {
            let x = sd * rng.sample::<f64, _>(StandardNormal);
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    m
}

/// `λ₁ e₁e₁ᵀ + Ξ/√B`.
pub fn sample_spiked(cfg: &SpikedModelConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let mut m = sample_wigner(cfg.dim, cfg.sigma, cfg.scaling, cfg.seed);
    m /= (cfg.batch as f64).sqrt();
    m[(0, 0)] += cfg.lambda1;
    Ok(m)
}

/// Krylov order used to extract the leading eigenvector.
const LANCZOS_ORDER: usize = 120;

/// `|⟨v̂₁, e₁⟩|²` for a single draw.
pub fn trial_overlap(cfg: &SpikedModelConfig) -> Result<f64> {
    let m = sample_spiked(cfg)?;
    if cfg.sigma == 0.0 {
        return Ok(1.0);
    }
    let oracle = DenseOracle::new(m)?;
    let (_, v) = top_eigenpair(&oracle, LANCZOS_ORDER.min(cfg.dim), derive_seed(cfg.seed, 1))?;
    Ok(v[0] * v[0])
}

/// Monte Carlo overlap against the closed form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub overlaps: Vec<f64>,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub formula: f64,
}

impl OverlapReport {
    /// `|mean − formula|`.
    pub fn gap(&self) -> f64 {
        (self.mean - self.formula).abs()
    }
}

/// Trial `k` uses seed `derive_seed(cfg.seed, k)`.
pub fn empirical_overlap(cfg: &SpikedModelConfig, trials: usize) -> Result<OverlapReport> {
    cfg.validate()?;
    if trials < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 trials, got {trials}")));
    }
    let overlaps = (0..trials)
        .into_par_iter()
        .map(|k| {
            trial_overlap(&SpikedModelConfig {
                seed: derive_seed(cfg.seed, k as u64),
                ..*cfg
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = trials as f64;
    let mean = overlaps.iter().sum::<f64>() / n;
    let var = overlaps.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(OverlapReport {
        mean,
        ci95: 1.96 * (var / n).sqrt(),
        formula: overlap_formula(cfg.lambda1, cfg.sigma, cfg.batch),
        overlaps,
    })
}

/// Semicircle CDF of radius `2σ`.
pub fn semicircle_cdf(x: f64, sigma: f64) -> f64 {
    let r = 2.0 * sigma;
    if x <= -r {
        return 0.0;
    }
    if x >= r {
        return 1.0;
    }
    0.5 + x * (r * r - x * x).sqrt() / (2.0 * std::f64::consts::PI * sigma * sigma) / 2.0 + (x / r).asin() / std::f64::consts::PI
}

/// Kolmogorov distance between the empirical spectral CDF and the semicircle.
pub fn semicircle_ks(eigenvalues: &[f64], sigma: f64) -> f64 {
    let mut xs = eigenvalues.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = semicircle_cdf(x, sigma);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// `σ_ε² = λ₋²/4`.
pub fn bulk_variance_from_edge(lambda_neg_edge: f64) -> Result<f64> {
    if !(lambda_neg_edge < 0.0) {
        return Err(Error::InvalidInput(format!("negative edge must be < 0, got {lambda_neg_edge}")));
    }
    Ok(lambda_neg_edge * lambda_neg_edge / 4.0)
}

/// `−λ₋/(2 uᵀSu)`, proportional (up to an unspecified constant) to the non-quadraticness.
pub fn nonquadraticness_ratio(lambda_neg_edge: f64, u_s_u: f64) -> Result<f64> {
    if !(u_s_u > 0.0) {
        return Err(Error::InvalidInput(format!("u^T S u must be > 0, got {u_s_u}")));
    }
    if lambda_neg_edge > 0.0 {
        return Err(Error::InvalidInput(format!("negative edge must be <= 0, got {lambda_neg_edge}")));
    }
    Ok(-lambda_neg_edge / (2.0 * u_s_u))
}

/// `|⟨v, e₁⟩|²` for a unit vector.
pub fn e1_overlap(v: &DVector<f64>) -> f64 {
    v[0] * v[0] / v.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn formula_examples() {
        let b = 128;
        let edge = 2.0 * 0.3 / (b as f64).sqrt();
        assert_eq!(overlap_formula(edge, 0.3, b), 0.0);
        let g = overlap_formula(10.0, 0.1, 128);
        assert!((g - (1.0 - 7.8125e-7)).abs() < 1e-15);
        assert!(overlap_formula(10.0, 0.1, usize::MAX) > 1.0 - 1e-15);
        assert!((bbp_threshold(0.1, 100) - 0.01).abs() < 1e-18);
    }

    #[test]
    fn sampling_is_symmetric_and_seeded() {
        let cfg = SpikedModelConfig::new(40, 4, 0.5, 3.0, 7).unwrap();
        let a = sample_spiked(&cfg).unwrap();
        assert_eq!(a, a.transpose());
        assert_eq!(a, sample_spiked(&cfg).unwrap());
        assert_ne!(a, sample_spiked(&SpikedModelConfig { seed: 8, ..cfg }).unwrap());
    }

    #[test]
    fn noiseless_limit_is_rank_one() {
        let cfg = SpikedModelConfig::new(20, 4, 0.0, 3.0, 1).unwrap();
        let a = sample_spiked(&cfg).unwrap();
        let mut want = DMatrix::zeros(20, 20);
        want[(0, 0)] = 3.0;
        assert_eq!(a, want);
        assert_eq!(empirical_overlap(&cfg, 10).unwrap().mean, 1.0);
    }

    #[test]
    fn bulk_edge_near_two_sigma() {
        let xi = sample_wigner(600, 0.7, NoiseScaling::PerDimension, 3);
        let eig = SymmetricEigen::new(xi).eigenvalues;
        let edge = eig.max().max(-eig.min());
        assert!((edge / 1.4 - 1.0).abs() < 0.05, "edge {edge}");
        let ks = semicircle_ks(eig.as_slice(), 0.7);
        assert!(ks < 0.05, "ks {ks}");
    }

    #[test]
    fn per_entry_scaling_grows_with_dimension() {
        let xi = sample_wigner(200, 1.0, NoiseScaling::PerEntry, 3);
        let edge = SymmetricEigen::new(xi).eigenvalues.max();
        assert!((edge / (2.0 * 200f64.sqrt()) - 1.0).abs() < 0.1);
    }

    #[test]
    fn semicircle_cdf_is_a_cdf() {
        assert_eq!(semicircle_cdf(-3.0, 1.0), 0.0);
        assert_eq!(semicircle_cdf(3.0, 1.0), 1.0);
        assert!((semicircle_cdf(0.0, 1.0) - 0.5).abs() < 1e-15);
        let h = 1e-6;
        let density = (semicircle_cdf(0.5 + h, 1.0) - semicircle_cdf(0.5 - h, 1.0)) / (2.0 * h);
        let want = (4.0f64 - 0.25).sqrt() / (2.0 * std::f64::consts::PI);
        assert!((density - want).abs() < 1e-8);
    }

    #[test]
    fn lanczos_overlap_matches_dense() {
        let cfg = SpikedModelConfig::new(300, 1, 1.0, 3.0, 11).unwrap();
        let m = sample_spiked(&cfg).unwrap();
        let eig = SymmetricEigen::new(m);
        let k = eig.eigenvalues.imax();
        let dense = e1_overlap(&eig.eigenvectors.column(k).into_owned());
        assert!((trial_overlap(&cfg).unwrap() - dense).abs() < 1e-8);
    }

    #[test]
    fn above_threshold_tracks_formula() {
        let cfg = SpikedModelConfig::new(500, 1, 1.0, 4.0, 2).unwrap();
        let r = empirical_overlap(&cfg, 20).unwrap();
        assert!((r.formula - 0.9375).abs() < 1e-15);
        assert!(r.gap() <= 5.0 / 500f64.sqrt() + r.ci95, "{r:?}");
    }

    #[test]
    fn subcritical_overlap_is_order_one_over_p() {
        let cfg = SpikedModelConfig::new(400, 16, 0.4, 0.5 * bbp_threshold(0.4, 16), 5).unwrap();
        let r = empirical_overlap(&cfg, 20).unwrap();
        assert_eq!(r.formula, 0.0);
        assert!(r.mean <= 10.0 / 400.0, "{r:?}");
    }

    #[test]
    fn window_between_true_and_stated_thresholds_has_macroscopic_overlap() {
        let cfg = SpikedModelConfig::new(600, 1, 1.0, 1.6, 9).unwrap();
        let r = empirical_overlap(&cfg, 10).unwrap();
        assert_eq!(r.formula, 0.0);
        let bbp = 1.0 - 1.0 / (1.6f64 * 1.6);
        assert!(r.mean > 0.4 && (r.mean - bbp).abs() < 0.2, "{r:?}");
    }

    #[test]
    fn trials_below_ten_are_rejected() {
        let cfg = SpikedModelConfig::new(10, 1, 1.0, 3.0, 0).unwrap();
        assert!(empirical_overlap(&cfg, 9).is_err());
        assert!(SpikedModelConfig::new(1, 1, 1.0, 3.0, 0).is_err());
        assert!(SpikedModelConfig::new(10, 0, 1.0, 3.0, 0).is_err());
        assert!(SpikedModelConfig::new(10, 1, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn edge_proxies() {
        let sigma = 0.37;
        assert!((bulk_variance_from_edge(-2.0 * sigma).unwrap() - sigma * sigma).abs() < 1e-15);
        assert_eq!(nonquadraticness_ratio(-1.0, 10.0).unwrap(), 0.05);
        assert_eq!(nonquadraticness_ratio(0.0, 10.0).unwrap(), 0.0);
        assert!(nonquadraticness_ratio(-1.0, 0.0).is_err());
        assert!(bulk_variance_from_edge(0.5).is_err());
    }
}
