//! Diagonal linear networks: Hessians, rotation ratios and stability thresholds.
//!
//! A depth-`n` DLN computes `Θ = Πϑᵢ` and is trained on a scalar convex
//! loss `z(Θ)`. All closed forms here take the loss through its first and
//! second derivatives.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{lanczos_mpk, tridiag_eigen, DenseOracle, LanczosOptions};

/// Scalar loss family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LossKind {
    /// `z = ½c(Θ − y)²`.
    Quadratic { target: f64, curvature: f64 },
    /// `z = ½(Θ − y)²`.
    Mse { target: f64 },
    /// `z = log(1 + e^{−yΘ})` with `y ∈ {−1, +1}`.
    BinaryCe { label: f64 },
}

/// Loss `z` with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossModel {
    pub kind: LossKind,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LossModel {
    pub fn quadratic(target: f64) -> Self {
        Self::scaled_quadratic(target, 1.0)
    }

    pub fn scaled_quadratic(target: f64, curvature: f64) -> Self {
        Self {
            kind: LossKind::Quadratic { target, curvature },
        }
    }

    pub fn mse(target: f64) -> Self {
        Self {
            kind: LossKind::Mse { target },
        }
    }

    pub fn binary_ce(label: f64) -> Result<Self> {
        if label != 1.0 && label != -1.0 {
            return Err(Error::InvalidInput(format!("binary CE label must be +-1, got {label}")));
        }
        Ok(Self {
            kind: LossKind::BinaryCe { label },
        })
    }

    pub fn z(&self, theta: f64) -> f64 {
        match self.kind {
            LossKind::Quadratic { target, curvature } => 0.5 * curvature * (theta - target).powi(2),
            LossKind::Mse { target } => 0.5 * (theta - target).powi(2),
            LossKind::BinaryCe { label } => {
                let x = label * theta;
                (-x.abs()).exp().ln_1p() + (-x).max(0.0)
            }
        }
    }

    pub fn z_prime(&self, theta: f64) -> f64 {
        match self.kind {
            LossKind::Quadratic { target, curvature } => curvature * (theta - target),
            LossKind::Mse { target } => theta - target,
            LossKind::BinaryCe { label } => -label * logistic(-label * theta),
        }
    }

    pub fn z_second(&self, theta: f64) -> f64 {
        match self.kind {
            LossKind::Quadratic { curvature, .. } => curvature,
            LossKind::Mse { .. } => 1.0,
            LossKind::BinaryCe { label } => {
                let s = logistic(label * theta);
                s * (1.0 - s)
            }
        }
    }
}

/// Two-parameter DLN state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dln2State {
    pub theta1: f64,
    pub theta2: f64,
}

impl Dln2State {
    pub fn new(theta1: f64, theta2: f64) -> Self {
        Self { theta1, theta2 }
    }

    pub fn product(&self) -> f64 {
        self.theta1 * self.theta2
    }

    /// Relabelled state with `|ϑ₁| ≤ |ϑ₂|`, and whether a swap happened.
    pub fn canonical(&self) -> (Self, bool) {
        if self.theta1.abs() <= self.theta2.abs() {
            (*self, false)
        } else {
            (Self::new(self.theta2, self.theta1), true)
        }
    }

    /// `ζ = ϑ₁/ϑ₂ + ϑ₂/ϑ₁`.
    pub fn zeta(&self) -> f64 {
        self.theta1 / self.theta2 + self.theta2 / self.theta1
    }
}

/// `[[z″ϑ₂², z″Θ + z′], [z″Θ + z′, z″ϑ₁²]]`.
pub fn hessian2(s: &Dln2State, loss: &LossModel) -> [[f64; 2]; 2] {
    let big = s.product();
    let (zp, zpp) = (loss.z_prime(big), loss.z_second(big));
    let off = zpp * big + zp;
    [[zpp * s.theta2 * s.theta2, off], [off, zpp * s.theta1 * s.theta1]]
}

/// Leading eigenpair of a symmetric 2×2 matrix, eigenvector sign fixed so `v₂ ≥ 0`.
pub fn eig2_top(h: &[[f64; 2]; 2]) -> (f64, [f64; 2]) {
    let (p, q, r) = (h[0][0], h[0][1], h[1][1]);
    let half = 0.5 * (p - r);
    let rad = half.hypot(q);
    let lambda = 0.5 * (p + r) + rad;
    let mut v = if q == 0.0 {
        if p >= r {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    } else if p >= r {
        [half + rad, q]
    } else {
        [q, rad - half]
    };
    let norm = v[0].hypot(v[1]);
    v = [v[0] / norm, v[1] / norm];
    if v[1] < 0.0 || (v[1] == 0.0 && v[0] < 0.0) {
        v = [-v[0], -v[1]];
    }
    (lambda, v)
}

/// `|z″(ϑ₂² − ϑ₁²) / (2(z′ + z″Θ))|`.
pub fn beta(s: &Dln2State, loss: &LossModel) -> Result<f64> {
    let big = s.product();
    let (zp, zpp) = (loss.z_prime(big), loss.z_second(big));
    let den = 2.0 * (zp + zpp * big);
    if den.abs() < 1e-300 {
        return Err(Error::NewtonSingularity);
    }
    Ok((zpp * (s.theta2 * s.theta2 - s.theta1 * s.theta1) / den).abs())
}

/// `R = β + √(β² + 1)`.
pub fn rotation_ratio_r2(beta: f64) -> f64 {
    beta + beta.hypot(1.0)
}

/// Predicted one-step growth factor of β:
/// `|(1 − η²z′²) / (1 − ζηz′ + η²z′²)|`.
pub fn gamma_beta(s: &Dln2State, loss: &LossModel, eta: f64) -> Result<f64> {
    let a = eta * loss.z_prime(s.product());
    let den = 1.0 - s.zeta() * a + a * a;
    if den.abs() < 1e-300 {
        return Err(Error::NewtonSingularity);
    }
    Ok(((1.0 - a * a) / den).abs())
}

/// One explicit GD step: `ϑ₁ ← ϑ₁ − ηz′ϑ₂`, `ϑ₂ ← ϑ₂ − ηz′ϑ₁`.
pub fn gd_step2(s: &Dln2State, loss: &LossModel, eta: f64) -> Dln2State {
    let zp = loss.z_prime(s.product());
    Dln2State::new(s.theta1 - eta * zp * s.theta2, s.theta2 - eta * zp * s.theta1)
}

/// Observed `β(s₁)/β(s₀)` after one explicit GD step.
pub fn one_step_beta_ratio(s: &Dln2State, loss: &LossModel, eta: f64) -> Result<f64> {
    let b0 = beta(s, loss)?;
    let b1 = match beta(&gd_step2(s, loss, eta), loss) {
        Ok(b) => b,
        Err(Error::NewtonSingularity) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(b1 / b0)
}

/// Threshold `η_eos = 2ϑ₁/(ϑ₂z′)` and correction `ξ = ϑ₁²/(ϑ₁² + ϑ₂²)` for the
/// relabelled state.
pub fn eta_eos(s: &Dln2State, loss: &LossModel) -> Result<(f64, f64)> {
    let (c, _) = s.canonical();
    let zp = loss.z_prime(c.product());
    if zp == 0.0 {
        return Err(Error::AtMinimum);
    }
    if c.theta2 == 0.0 {
        return Err(Error::InvalidInput("theta2 = 0".into()));
    }
    let eta = 2.0 * c.theta1 / (c.theta2 * zp);
    let t1 = c.theta1 * c.theta1;
    let xi = t1 / (t1 + c.theta2 * c.theta2);
    Ok((eta, xi))
}

/// Learning rate `|η_eos|(1 − ξ)` separating the stable and unstable rotation regimes.
pub fn regime_boundary(s: &Dln2State, loss: &LossModel) -> Result<f64> {
    let (eta, xi) = eta_eos(s, loss)?;
    Ok(eta.abs() * (1.0 - xi))
}

/// Whether an unstable rotation regime exists: `ϑ₂² > 2ϑ₁²` (relabelled).
pub fn instability_regime_exists(s: &Dln2State) -> bool {
    let (c, _) = s.canonical();
    c.theta2 * c.theta2 > 2.0 * c.theta1 * c.theta1
}

/// One record of a GD trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub state: Dln2State,
    pub loss: f64,
    pub hessian: [[f64; 2]; 2],
    pub lambda1: f64,
    /// `atan2(v₁, v₂)` with `v₂ ≥ 0`, in `(−π/2, π/2]`.
    pub angle: f64,
    pub beta: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrajectoryStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    /// `|angle|` change over the first step; positive means moving toward the ϑ₁ axis.
    pub fn first_step_rotation(&self) -> Option<f64> {
        match self.points.as_slice() {
            [a, b, ..] => Some(b.angle.abs() - a.angle.abs()),
            _ => None,
        }
    }
}

fn trajectory_point(step: usize, s: Dln2State, loss: &LossModel) -> TrajectoryPoint {
    let hessian = hessian2(&s, loss);
    let (lambda1, v) = eig2_top(&hessian);
    let b = beta(&s, loss).unwrap_or(f64::INFINITY);
    TrajectoryPoint {
        step,
        state: s,
        loss: loss.z(s.product()),
        hessian,
        lambda1,
        angle: v[0].atan2(v[1]),
        beta: b,
        r: rotation_ratio_r2(b),
    }
}

/// Exact GD iterates with per-step closed-form eigen information.
///
/// Stops early with [`TrajectoryStatus::Diverged`] once a parameter exceeds `1e100` in magnitude.
pub fn gd_trajectory(s0: Dln2State, loss: &LossModel, eta: f64, steps: usize) -> Trajectory {
    let mut points = vec![trajectory_point(0, s0, loss)];
    let mut s = s0;
    for step in 1..=steps {
        s = gd_step2(&s, loss, eta);
        if !(s.theta1.abs() <= 1e100 && s.theta2.abs() <= 1e100) {
            return Trajectory {
                points,
                status: TrajectoryStatus::Diverged,
            };
        }
        points.push(trajectory_point(step, s, loss));
    }
    Trajectory {
        points,
        status: TrajectoryStatus::Completed,
    }
}

/// Depth-`n` DLN state; all entries nonzero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DlnNState {
    pub thetas: Vec<f64>,
}

impl DlnNState {
    pub fn new(thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() || thetas.iter().any(|&t| t == 0.0 || !t.is_finite()) {
            return Err(Error::InvalidInput("DLN parameters must be finite and nonzero".into()));
        }
        Ok(Self { thetas })
    }

    pub fn product(&self) -> f64 {
        self.thetas.iter().product()
    }

    /// Index of the smallest-magnitude (sharpest) parameter.
    pub fn sharpest(&self) -> usize {
        let mut best = 0;
        for (i, t) in self.thetas.iter().enumerate() {
            if t.abs() < self.thetas[best].abs() {
                best = i;
            }
        }
        best
    }
}

/// `H_jk = (z″Θ² + z′Θ)/(ϑⱼϑ_k) − δ_jk z′Θ/ϑⱼ²`.
///
/// The `z′` term is `z′ ∂²Θ/∂ϑⱼ∂ϑ_k`, which vanishes on the diagonal.
pub fn hessian_n(s: &DlnNState, loss: &LossModel) -> DMatrix<f64> {
    let n = s.thetas.len();
    let big = s.product();
    let (zp, zpp) = (loss.z_prime(big), loss.z_second(big));
    DMatrix::from_fn(n, n, |j, k| {
        let inv = 1.0 / (s.thetas[j] * s.thetas[k]);
        let curv = zpp * big * big * inv;
        if j == k {
            curv
        } else {
            curv + zp * big * inv
        }
    })
}

/// Unit vector with components `ψ/ϑⱼ`, `ψ = (Σϑ_k⁻²)^{−1/2}`.
pub fn leading_eigvec_approx(s: &DlnNState) -> DVector<f64> {
    let psi = s.thetas.iter().map(|t| t.powi(-2)).sum::<f64>().powf(-0.5);
    DVector::from_iterator(s.thetas.len(), s.thetas.iter().map(|t| psi / t))
}

/// Relative spread `(max − min)/|mean|` of `cᵢ = (λ + z′Θ/ϑᵢ²)vᵢϑᵢ`.
pub fn constancy_residual(v: &DVector<f64>, lambda: f64, s: &DlnNState, loss: &LossModel) -> f64 {
    let big = s.product();
    let zp = loss.z_prime(big);
    let c: Vec<f64> = s
        .thetas
        .iter()
        .zip(v.iter())
        .map(|(t, vi)| (lambda + zp * big / (t * t)) * vi * t)
        .collect();
    let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    (hi - lo) / mean.abs()
}

/// `f(ϑ) = |ϑ|(λ̂₁ + z′Θ/ϑ²)`.
pub fn rotation_f(theta: f64, lambda1: f64, zp_big: f64) -> f64 {
    theta.abs() * (lambda1 + zp_big / (theta * theta))
}

/// `R_n = f(ϑ_k)/f(ϑ₁)` with ϑ₁ the sharpest parameter.
pub fn rotation_ratio_rn(s: &DlnNState, lambda1: f64, loss: &LossModel, k: usize) -> Result<f64> {
    if k >= s.thetas.len() {
        return Err(Error::InvalidInput(format!("index {k} out of range")));
    }
    let big = s.product();
    let zp_big = loss.z_prime(big) * big;
    let sharp = s.thetas[s.sharpest()];
    Ok(rotation_f(s.thetas[k], lambda1, zp_big) / rotation_f(sharp, lambda1, zp_big))
}

/// Magnitude above which `f` is increasing: `√(z′Θ/λ̂₁)`, or 0 when `z′Θ/λ̂₁ ≤ 0`.
pub fn theta_crit(s: &DlnNState, lambda1: f64, loss: &LossModel) -> f64 {
    let big = s.product();
    let ratio = loss.z_prime(big) * big / lambda1;
    if ratio > 0.0 {
        ratio.sqrt()
    } else {
        0.0
    }
}

/// Learning rate at which the scalar GD map `Θ ← Θ − ηz′(Θ)` has a period-2 orbit through `theta0`.
///
/// Bisection on `Θ₂ − Θ₀` over `bracket`, at most 200 halvings.
pub fn period2_eta<F>(z_prime: F, theta0: f64, bracket: (f64, f64)) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let disp = |eta: f64| {
        let t1 = theta0 - eta * z_prime(theta0);
        t1 - eta * z_prime(t1) - theta0
    };
    let (mut lo, mut hi) = bracket;
    let (mut f_lo, f_hi) = (disp(lo), disp(hi));
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !(f_lo.signum() != f_hi.signum()) || !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(Error::BracketNoStraddle);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = disp(mid);
        if f_mid == 0.0 || (hi - lo) <= f64::EPSILON * mid.abs() {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Rescaled matrix `B = diag(ϑ) H diag(ϑ)⁻¹` and its leading eigenvector.
#[derive(Debug, Clone)]
pub struct SharedRescaled {
    pub b: DMatrix<f64>,
    /// Top eigenvector of `H`.
    pub v: DVector<f64>,
    /// `ω = ϑ ∘ v`, the top eigenvector of `B`.
    pub omega: DVector<f64>,
    pub lambda1: f64,
}

impl SharedRescaled {
    /// `(ω_j/ω_i)²`.
    pub fn omega_ratio_sq(&self, i: usize, j: usize) -> f64 {
        (self.omega[j] / self.omega[i]).powi(2)
    }

    /// `(v_j/v_i)²`.
    pub fn eigvec_ratio_sq(&self, i: usize, j: usize) -> f64 {
        (self.v[j] / self.v[i]).powi(2)
    }
}

/// `B_kj = (ϑ_k/ϑ_j)H_kj` with the top eigenvector in ω-coordinates.
pub fn shared_rescaled_matrix(h: &DMatrix<f64>, thetas: &[f64]) -> Result<SharedRescaled> {
    let n = thetas.len();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: h.nrows(),
        });
    }
    if thetas.iter().any(|&t| t == 0.0) {
        return Err(Error::InvalidInput("zero parameter".into()));
    }
    let b = DMatrix::from_fn(n, n, |k, j| thetas[k] / thetas[j] * h[(k, j)]);
    let out = lanczos_mpk(&DenseOracle::new(h.clone())?, n, &LanczosOptions::with_seed(0))?;
    let eig = tridiag_eigen(&out.tridiagonal, true);
    let q = eig.vectors.expect("vectors requested");
    let v = (out.basis.to_matrix() * q.column(0)).normalize();
    let omega = DVector::from_iterator(n, v.iter().zip(thetas).map(|(vi, t)| vi * t));
    Ok(SharedRescaled {
        b,
        v,
        omega,
        lambda1: eig.values[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use nalgebra::SymmetricEigen;
    use rand::Rng;

    fn quad0() -> LossModel {
        LossModel::quadratic(0.0)
    }

    fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> DMatrix<f64> {
        let n = x.len();
        DMatrix::from_fn(n, n, |i, j| {
            let eval = |di: f64, dj: f64| {
                let mut y = x.to_vec();
                y[i] += di;
                y[j] += dj;
                f(&y)
            };
            (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h)
        })
    }

    #[test]
    fn loss_derivatives_match_finite_differences() {
        let mut rng = rng_from_seed(1);
        let losses = [LossModel::quadratic(0.7), LossModel::mse(-0.3), LossModel::binary_ce(1.0).unwrap(), LossModel::binary_ce(-1.0).unwrap()];
        for loss in losses {
            for _ in 0..50 {
                let x: f64 = rng.random_range(-3.0..3.0);
                let h = 1e-5;
                let fd1 = (loss.z(x + h) - loss.z(x - h)) / (2.0 * h);
                let fd2 = (loss.z_prime(x + h) - loss.z_prime(x - h)) / (2.0 * h);
                assert!((fd1 - loss.z_prime(x)).abs() <= 1e-6 * (1.0 + loss.z_prime(x).abs()));
                assert!((fd2 - loss.z_second(x)).abs() <= 1e-6 * (1.0 + loss.z_second(x).abs()));
                assert!(loss.z(x) >= 0.0 && loss.z_second(x) >= 0.0);
            }
        }
        assert!(LossModel::binary_ce(0.5).is_err());
    }

    #[test]
    fn hessian2_examples() {
        let loss = LossModel::scaled_quadratic(0.0, 1.0);
        let s = Dln2State::new(1.0, 2.0);
        assert_eq!(hessian2(&s, &loss), [[4.0, 4.0], [4.0, 1.0]]);
        let at_min = LossModel::quadratic(1.0);
        let h = hessian2(&Dln2State::new(1.0, 1.0), &at_min);
        assert_eq!(h, [[1.0, 1.0], [1.0, 1.0]]);
        let swapped = hessian2(&Dln2State::new(2.0, 1.0), &loss);
        assert_eq!(swapped, [[1.0, 4.0], [4.0, 4.0]]);
    }

    #[test]
    fn beta_examples() {
        let s = Dln2State::new(1.0, 2.0);
        assert_eq!(beta(&s, &quad0()).unwrap(), 0.375);
        assert_eq!(beta(&Dln2State::new(1.5, -1.5), &LossModel::quadratic(0.3)).unwrap(), 0.0);
        // Θ = 1 with target 0: z′ = 1, z″ = 1.
        let b = beta(&Dln2State::new(0.1, 10.0), &quad0()).unwrap();
        assert!((b - 24.9975).abs() < 1e-12);
        // z′ + z″Θ = 2Θ − y vanishes at Θ = y/2.
        assert_eq!(beta(&Dln2State::new(0.5, 1.0), &LossModel::quadratic(1.0)), Err(Error::NewtonSingularity));
    }

    #[test]
    fn r2_examples() {
        assert_eq!(rotation_ratio_r2(0.0), 1.0);
        let r = rotation_ratio_r2(0.375);
        assert!((r - 1.443000468).abs() < 1e-5);
        let (_, v) = eig2_top(&[[4.0, 4.0], [4.0, 1.0]]);
        assert!(((v[0] / v[1]).abs() - r).abs() < 1e-12);
        let b = 1e6;
        assert!((rotation_ratio_r2(b) / (2.0 * b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn r2_matches_dense_eigenvectors_for_random_states() {
        let mut rng = rng_from_seed(7);
        let mut checked = 0;
        while checked < 300 {
            let t1: f64 = rng.random_range(-3.0..3.0);
            let t2: f64 = rng.random_range(-3.0..3.0);
            let loss = match checked % 3 {
                0 => LossModel::quadratic(rng.random_range(-2.0..2.0)),
                1 => LossModel::mse(rng.random_range(-2.0..2.0)),
                _ => LossModel::binary_ce(if rng.random::<bool>() { 1.0 } else { -1.0 }).unwrap(),
            };
            let (s, _) = Dln2State::new(t1, t2).canonical();
            let big = s.product();
            if (loss.z_prime(big) + loss.z_second(big) * big).abs() < 0.05 {
                continue;
            }
            let h = hessian2(&s, &loss);
            let dense = SymmetricEigen::new(DMatrix::from_row_slice(2, 2, &[h[0][0], h[0][1], h[1][0], h[1][1]]));
            let top = dense.eigenvalues.imax();
            let v = dense.eigenvectors.column(top);
            let ratio = (v[0] / v[1]).abs();
            let r = rotation_ratio_r2(beta(&s, &loss).unwrap());
            assert!((r - ratio).abs() <= 1e-8 * r, "{r} vs {ratio}");
            checked += 1;
        }
    }

    #[test]
    fn swapping_parameters_inverts_the_component_ratio() {
        let mut rng = rng_from_seed(8);
        for _ in 0..100 {
            let s = Dln2State::new(rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
            let loss = LossModel::mse(rng.random_range(-1.0..1.0));
            let (_, v) = eig2_top(&hessian2(&s, &loss));
            let (_, w) = eig2_top(&hessian2(&Dln2State::new(s.theta2, s.theta1), &loss));
            let prod = (v[0] / v[1]).abs() * (w[0] / w[1]).abs();
            assert!((prod - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gamma_beta_examples() {
        let s = Dln2State::new(0.1, 10.0);
        let loss = quad0();
        assert_eq!(gamma_beta(&s, &loss, 0.0).unwrap(), 1.0);
        assert_eq!(gamma_beta(&s, &loss, 1.0).unwrap(), 0.0);
        let g = gamma_beta(&s, &loss, 0.005).unwrap();
        assert!(g > 1.0);
        let observed = one_step_beta_ratio(&s, &loss, 0.005).unwrap();
        assert!((observed / g - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_beta_is_exact_for_centered_quadratic() {
        let mut rng = rng_from_seed(12);
        for _ in 0..200 {
            let s = Dln2State::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let eta = rng.random_range(0.0..0.5);
            let loss = quad0();
            let (Ok(g), Ok(o)) = (gamma_beta(&s, &loss, eta), one_step_beta_ratio(&s, &loss, eta)) else {
                continue;
            };
            if g.is_finite() && o.is_finite() && g < 1e6 {
                assert!((g - o).abs() <= 1e-8 * (1.0 + g), "{g} {o}");
            }
        }
    }

    #[test]
    fn small_step_prediction_within_ten_percent() {
        let mut rng = rng_from_seed(13);
        for _ in 0..100 {
            let s = Dln2State::new(rng.random_range(0.2..1.0), rng.random_range(1.5..3.0));
            let loss = LossModel::mse(rng.random_range(-1.0..1.0));
            let big = s.product();
            if (loss.z_prime(big) + big).abs() < 0.2 || loss.z_prime(big).abs() < 0.05 {
                continue;
            }
            let eta = 1e-3;
            let g = gamma_beta(&s, &loss, eta).unwrap();
            let o = one_step_beta_ratio(&s, &loss, eta).unwrap();
            assert!((o / g - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn eta_eos_examples() {
        let s = Dln2State::new(0.1, 10.0);
        let (eta, xi) = eta_eos(&s, &quad0()).unwrap();
        assert!((eta - 0.02).abs() < 1e-15);
        assert!((xi - 0.01 / 100.01).abs() < 1e-15);
        assert!(instability_regime_exists(&s));
        let edge = Dln2State::new(1.0, 2f64.sqrt());
        assert_eq!(edge.theta2 * edge.theta2, 2.0000000000000004);
        assert!(!instability_regime_exists(&Dln2State::new(0.5, 0.5 * 2f64.sqrt())) || 0.5 * 2f64.sqrt() * 0.5 * 2f64.sqrt() > 0.5);
        assert_eq!(eta_eos(&Dln2State::new(1.0, 1.0), &LossModel::quadratic(1.0)), Err(Error::AtMinimum));
    }

    #[test]
    fn regime_existence_boundary_is_strict() {
        // ϑ₂² = 2ϑ₁² exactly in floating point: ϑ₁ = 1, ϑ₂² = 2 requires ϑ₂ = √2 which rounds up, so use ϑ₁² = 0.5.
        let t1 = 0.5f64.sqrt();
        let s = Dln2State::new(t1, 1.0);
        if s.theta2 * s.theta2 == 2.0 * s.theta1 * s.theta1 {
            assert!(!instability_regime_exists(&s));
        }
        assert!(!instability_regime_exists(&Dln2State::new(1.0, 1.0)));
        assert!(instability_regime_exists(&Dln2State::new(1.0, 1.5)));
    }

    #[test]
    fn regime_dichotomy_on_dense_grid() {
        let mut rng = rng_from_seed(14);
        for _ in 0..50 {
            let t1: f64 = rng.random_range(0.1..1.0);
            let t2: f64 = t1 * rng.random_range(1.5..10.0);
            let s = Dln2State::new(t1, t2);
            let loss = quad0();
            let zp = loss.z_prime(s.product()).abs();
            let boundary = 2.0 * t1 * t2 / (t1 * t1 + t2 * t2);
            for k in 1..400 {
                let a = k as f64 / 400.0;
                if (a - boundary).abs() < 1e-6 {
                    continue;
                }
                let g = match gamma_beta(&s, &loss, a / zp) {
                    Ok(g) => g,
                    Err(_) => continue,
                };
                if a < boundary {
                    assert!(g > 1.0);
                } else {
                    assert!(g < 1.0);
                }
            }
        }
    }

    #[test]
    fn trajectory_examples() {
        let s = Dln2State::new(-0.1, 10.0);
        let loss = quad0();
        let frozen = gd_trajectory(s, &loss, 0.0, 5);
        assert!(frozen.points.iter().all(|p| p.state == s));
        let stable = gd_trajectory(s, &loss, 0.005, 3).first_step_rotation().unwrap();
        let unstable = gd_trajectory(s, &loss, 0.1, 3).first_step_rotation().unwrap();
        assert!(stable > 0.0 && unstable < 0.0);
        let blow = gd_trajectory(Dln2State::new(3.0, 3.0), &loss, 5.0, 200);
        assert_eq!(blow.status, TrajectoryStatus::Diverged);
        for p in &gd_trajectory(s, &loss, 0.05, 10).points {
            assert!(p.angle > -std::f64::consts::FRAC_PI_2 && p.angle <= std::f64::consts::FRAC_PI_2);
        }
    }

    #[test]
    fn hessian_n_reduces_to_hessian2() {
        let mut rng = rng_from_seed(15);
        for _ in 0..50 {
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let loss = LossModel::mse(rng.random_range(-1.0..1.0));
            let h2 = hessian2(&Dln2State::new(a, b), &loss);
            let hn = hessian_n(&DlnNState::new(vec![a, b]).unwrap(), &loss);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((h2[i][j] - hn[(i, j)]).abs() <= 1e-12 * (1.0 + h2[i][j].abs()));
                }
            }
        }
    }

    #[test]
    fn hessian_n_matches_finite_differences() {
        let s = DlnNState::new(vec![1.0, 2.0, 4.0]).unwrap();
        let loss = quad0();
        let fd = fd_hessian(|x: &[f64]| 0.5 * (x[0] * x[1] * x[2]).powi(2), &s.thetas, 1e-4);
        let h = hessian_n(&s, &loss);
        assert!((&h - &fd).amax() <= 1e-5 * h.amax());
        let mut rng = rng_from_seed(16);
        for n in 2..=6 {
            let thetas: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.4) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let s = DlnNState::new(thetas.clone()).unwrap();
            let loss = LossModel::mse(0.3);
            let fd = fd_hessian(|x: &[f64]| loss.z(x.iter().product()), &thetas, 1e-4);
            let h = hessian_n(&s, &loss);
            assert!((&h - &fd).amax() <= 1e-5 * h.amax().max(1.0));
        }
    }

    #[test]
    fn hessian_n_at_optimum_is_rank_one() {
        let s = DlnNState::new(vec![0.5, 2.0, 3.0]).unwrap();
        let loss = LossModel::quadratic(3.0);
        let mut eig: Vec<f64> = SymmetricEigen::new(hessian_n(&s, &loss)).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        assert!(eig[1].abs() < 1e-12 && eig[2].abs() < 1e-12 && eig[0] > 1.0);
    }

    #[test]
    fn approximate_eigenvector_examples() {
        let v = leading_eigvec_approx(&DlnNState::new(vec![1.0, 1.0]).unwrap());
        assert!((v[0] - 0.5f64.sqrt()).abs() < 1e-15 && (v[1] - 0.5f64.sqrt()).abs() < 1e-15);
        let v = leading_eigvec_approx(&DlnNState::new(vec![0.1, 10.0]).unwrap());
        assert!((v[0] / v[1] - 100.0).abs() < 1e-10);
        let s = DlnNState::new(vec![0.1, 1.0, 10.0]).unwrap();
        let loss = LossModel::quadratic(1.0 + 1e-9);
        let h = hessian_n(&s, &loss);
        let eig = SymmetricEigen::new(h);
        let top = eig.eigenvalues.imax();
        let truth = eig.eigenvectors.column(top);
        let approx = leading_eigvec_approx(&s);
        assert!(truth.dot(&approx).powi(2) >= 0.99);
        assert!(constancy_residual(&approx, eig.eigenvalues[top], &s, &loss) < 1e-6);
    }

    #[test]
    fn constancy_examples() {
        let s = DlnNState::new(vec![0.7, 1.3, 2.1]).unwrap();
        let loss = LossModel::mse(0.5);
        let eig = SymmetricEigen::new(hessian_n(&s, &loss));
        let top = eig.eigenvalues.imax();
        let v = eig.eigenvectors.column(top).into_owned();
        assert!(constancy_residual(&v, eig.eigenvalues[top], &s, &loss) <= 1e-4);
        let random = DVector::from_vec(vec![0.9, -0.3, 0.3]).normalize();
        assert!(constancy_residual(&random, eig.eigenvalues[top], &s, &loss) > 0.1);
        let s2 = DlnNState::new(vec![0.4, 1.7]).unwrap();
        let h = hessian2(&Dln2State::new(0.4, 1.7), &loss);
        let (l, v) = eig2_top(&h);
        assert!(constancy_residual(&DVector::from_vec(v.to_vec()), l, &s2, &loss) <= 1e-10);
    }

    #[test]
    fn rn_matches_eigenvector_ratio_and_is_monotone() {
        let s = DlnNState::new(vec![0.3, 0.8, 1.5, 2.5]).unwrap();
        let loss = LossModel::mse(0.2);
        let eig = SymmetricEigen::new(hessian_n(&s, &loss));
        let top = eig.eigenvalues.imax();
        let lambda = eig.eigenvalues[top];
        let v = eig.eigenvectors.column(top);
        for k in 0..4 {
            let rn = rotation_ratio_rn(&s, lambda, &loss, k).unwrap();
            assert!((rn - (v[0] / v[k]).abs()).abs() <= 1e-9 * rn);
        }
        assert_eq!(rotation_ratio_rn(&s, lambda, &loss, 0).unwrap(), 1.0);

        let crit = theta_crit(&s, lambda, &loss);
        let zp_big = loss.z_prime(s.product()) * s.product();
        let mut prev = 0.0;
        for i in 0..50 {
            let t = crit * 1.01 + i as f64 * 0.1;
            let f = rotation_f(t, lambda, zp_big);
            if i > 0 {
                assert!(f > prev);
            }
            prev = f;
        }
    }

    #[test]
    fn derivative_of_f_changes_sign_at_theta_crit() {
        let s = DlnNState::new(vec![0.5, 1.0, 3.0]).unwrap();
        let loss = LossModel::mse(-1.0);
        let lambda = 2.0;
        let zp_big = loss.z_prime(s.product()) * s.product();
        assert!(zp_big > 0.0);
        let crit = theta_crit(&s, lambda, &loss);
        let fprime = |t: f64| (rotation_f(t + 1e-6, lambda, zp_big) - rotation_f(t - 1e-6, lambda, zp_big)) / 2e-6;
        assert!(fprime(crit * 0.9) < 0.0);
        assert!(fprime(crit * 1.1) > 0.0);
        let cube_root = (2.0 * zp_big / lambda).cbrt();
        assert!((cube_root - crit).abs() > 1e-3);
    }

    #[test]
    fn period2_examples() {
        let eta = period2_eta(|t| t, 1.0, (1.0, 3.0)).unwrap();
        assert!((eta - 2.0).abs() < 1e-12);
        let eta = period2_eta(|t| 4.0 * t, 1.0, (0.3, 1.0)).unwrap();
        assert!((eta - 0.5).abs() < 1e-12);
        let piecewise = |t: f64| if t > 0.0 { 2.0 * t } else { 8.0 * t };
        let eta = period2_eta(piecewise, 1.0, (0.55, 1.0)).unwrap();
        assert!((eta - 0.625).abs() < 1e-12);
        let t1 = 1.0 - eta * piecewise(1.0);
        let t2 = t1 - eta * piecewise(t1);
        assert!((t2 - 1.0).abs() <= 1e-10);
        assert_eq!(period2_eta(|t| t, 1.0, (0.5, 1.5)), Err(Error::BracketNoStraddle));
    }

    #[test]
    fn shared_rescaling_is_a_similarity() {
        let s = DlnNState::new(vec![0.5, 1.2, 2.0, 0.9]).unwrap();
        let loss = LossModel::mse(0.4);
        let h = hessian_n(&s, &loss);
        let sr = shared_rescaled_matrix(&h, &s.thetas).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_vec(s.thetas.clone()));
        let dinv = DMatrix::from_diagonal(&DVector::from_iterator(4, s.thetas.iter().map(|t| 1.0 / t)));
        assert!((&sr.b - &d * &h * &dinv).amax() < 1e-12);
        let bw = &sr.b * &sr.omega;
        assert!((bw - &sr.omega * sr.lambda1).norm() < 1e-10 * sr.omega.norm() * sr.lambda1.abs());
        assert!((&sr.b - sr.b.transpose()).amax() > 1e-3);

        let equal = DlnNState::new(vec![1.3, 1.3, 1.3]).unwrap();
        let he = hessian_n(&equal, &loss);
        let se = shared_rescaled_matrix(&he, &equal.thetas).unwrap();
        assert!((&se.b - &he).amax() < 1e-12);
        assert!((se.omega_ratio_sq(0, 2) - se.eigvec_ratio_sq(0, 2)).abs() < 1e-12);
    }

    #[test]
    fn shared_rescaling_shifts_weight_to_smaller_scale() {
        let mut rng = rng_from_seed(17);
        for _ in 0..20 {
            let n = 4;
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let w = &a * a.transpose() + DMatrix::from_element(n, n, 0.5);
            let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let mut prev = 0.0;
            for (idx, r) in [1.0, 1.5, 2.0, 3.0, 5.0, 10.0].iter().enumerate() {
                let mut t = base.clone();
                t[1] = r * t[0];
                let h = DMatrix::from_fn(n, n, |k, j| w[(k, j)] / (t[k] * t[j]));
                let sr = shared_rescaled_matrix(&h, &t).unwrap();
                let ratio = sr.eigvec_ratio_sq(1, 0);
                if idx > 0 {
                    assert!(ratio > prev);
                }
                prev = ratio;
            }
        }
    }
}
