//! Matrix-free symmetric eigen-estimation.
//!
//! The Lanczos driver uses the modified Parlett-Kahan ("twice is enough")
//! rule: each new residual is orthogonalised once against the stored basis,
//! a second pass runs when too much norm was lost, and the attempt restarts
//! when even the second pass leaves an essentially dependent vector.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// A symmetric linear operator available only through matrix-vector products.
pub trait HvpOracle: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
}

/// Dense symmetric matrix as an oracle.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub matrix: DMatrix<f64>,
}

impl DenseOracle {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        Ok(Self { matrix })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self {
            matrix: DMatrix::from_diagonal(&DVector::from_column_slice(values)),
        }
    }
}

impl HvpOracle for DenseOracle {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }
}

/// Oracle backed by a closure.
pub struct FnOracle<F> {
    dim: usize,
    f: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> HvpOracle for FnOracle<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (self.f)(v)
    }
}

/// Largest normalised symmetry defect `|a·Hb − b·Ha| / (‖a‖‖b‖‖H‖_est)` over
/// random probe pairs. `‖H‖_est` is the largest `‖Hx‖/‖x‖` seen.
pub fn symmetry_probe(oracle: &dyn HvpOracle, trials: usize, seed: u64) -> f64 {
    let n = oracle.dim();
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let a = random_vector(n, &mut rng);
        let b = random_vector(n, &mut rng);
        let ha = oracle.apply(&a);
        let hb = oracle.apply(&b);
        let norm_est = (ha.norm() / a.norm()).max(hb.norm() / b.norm()).max(f64::MIN_POSITIVE);
        let defect = (a.dot(&hb) - b.dot(&ha)).abs() / (a.norm() * b.norm() * norm_est);
        worst = worst.max(defect);
    }
    worst
}

/// Symmetric tridiagonal matrix `T` produced by Lanczos.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TridiagonalResult {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl TridiagonalResult {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || offdiag.len() + 1 != diag.len() {
            return Err(Error::InvalidInput(format!(
                "tridiagonal lengths {} and {}",
                diag.len(),
                offdiag.len()
            )));
        }
        Ok(Self { diag, offdiag })
    }

    pub fn order(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.order();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = self.diag[i];
        }
        for (i, &b) in self.offdiag.iter().enumerate() {
            t[(i, i + 1)] = b;
            t[(i + 1, i)] = b;
        }
        t
    }
}

/// Krylov basis `U` with (numerically) orthonormal columns.
#[derive(Debug, Clone)]
pub struct KrylovBasis {
    pub columns: Vec<DVector<f64>>,
}

impl KrylovBasis {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.columns)
    }

    /// `max |uᵢ·uⱼ − δᵢⱼ|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.columns.len() {
            for j in 0..=i {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.columns[i].dot(&self.columns[j]) - target).abs());
            }
        }
        worst
    }
}

/// Ritz values (descending) and the leading Ritz pair.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    pub ritz_values: Vec<f64>,
    pub top_pair: Option<(f64, DVector<f64>)>,
    /// `‖A yᵢ − θᵢ yᵢ‖` for each Ritz pair, when vectors were requested.
    pub residuals: Option<Vec<f64>>,
}

/// Project `w` off the span of `basis`.
///
/// Returns `(w − U(Uᵀw), ‖w_⊥‖/‖w‖)`; an empty basis gives `(w, 1)`.
pub fn mpk_orthogonalize(w: &DVector<f64>, basis: &[DVector<f64>]) -> Result<(DVector<f64>, f64)> {
    let w_norm = w.norm();
    if !w_norm.is_finite() {
        return Err(Error::NonFinite("probe vector".into()));
    }
    if w_norm == 0.0 {
        return Err(Error::DegenerateProbe);
    }
    if basis.is_empty() {
        return Ok((w.clone(), 1.0));
    }
    let coeffs: Vec<f64> = basis.iter().map(|u| u.dot(w)).collect();
    let mut w_perp = w.clone();
    for (u, c) in basis.iter().zip(coeffs) {
        w_perp.axpy(-c, u, 1.0);
    }
    let gamma = w_perp.norm() / w_norm;
    Ok((w_perp, gamma))
}

/// Tuning knobs for [`lanczos_mpk`].
#[derive(Debug, Clone)]
pub struct LanczosOptions {
    pub seed: u64,
    pub gamma_max: f64,
    pub gamma_min: f64,
    pub max_attempts: usize,
    /// Relative size below which a residual counts as an invariant-subspace breakdown.
    pub breakdown_tol: f64,
    /// Optional start vector for the first attempt.
    pub start: Option<DVector<f64>>,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma_max: std::f64::consts::FRAC_1_SQRT_2,
            gamma_min: 1e-14,
            max_attempts: 8,
            breakdown_tol: 1e-13,
            start: None,
        }
    }
}

impl LanczosOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Output of a successful Lanczos run.
#[derive(Debug, Clone)]
pub struct LanczosOutput {
    pub tridiagonal: TridiagonalResult,
    pub basis: KrylovBasis,
    /// Index of the attempt that succeeded (0 when no restart was needed).
    pub attempt: usize,
    /// Number of invariant-subspace breakdowns bridged with fresh vectors.
    pub breakdowns: usize,
}

fn random_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Fresh unit vector orthogonal to `basis`, used after a breakdown.
fn fresh_orthogonal<R: Rng>(n: usize, basis: &[DVector<f64>], rng: &mut R) -> Option<DVector<f64>> {
    for _ in 0..16 {
        let r = random_vector(n, rng);
        let Ok((r1, g1)) = mpk_orthogonalize(&r, basis) else {
            continue;
        };
        let Ok((r2, g2)) = mpk_orthogonalize(&r1, basis) else {
            continue;
        };
        if g1 * g2 > 1e-8 {
            let norm = r2.norm();
            return Some(r2 / norm);
        }
    }
    None
}

enum Attempt {
    Done(TridiagonalResult, KrylovBasis, usize),
    Restart,
}

fn lanczos_attempt(
    oracle: &dyn HvpOracle,
    m: usize,
    opts: &LanczosOptions,
    attempt: usize,
) -> Result<Attempt> {
    let n = oracle.dim();
    let mut rng = rng_from_seed(derive_seed(opts.seed, attempt as u64));
    let start = match (&opts.start, attempt) {
        (Some(s), 0) => s.clone(),
        _ => random_vector(n, &mut rng),
    };
    let start_norm = start.norm();
    if !(start_norm > 1e-300) || !start_norm.is_finite() {
        return Ok(Attempt::Restart);
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m);
    basis.push(start / start_norm);
    let mut diag = Vec::with_capacity(m);
    let mut offdiag = Vec::with_capacity(m.saturating_sub(1));
    let mut beta_prev = 0.0;
    let mut scale = 0.0f64;
    let mut breakdowns = 0;

    for i in 0..m {
        let u = &basis[i];
        let mut w = oracle.apply(u);
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            });
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("operator output".into()));
        }
        scale = scale.max(w.norm());
        let a = w.dot(u);
        w.axpy(-a, u, 1.0);
        if i > 0 {
            w.axpy(-beta_prev, &basis[i - 1], 1.0);
        }
        diag.push(a);
        if i + 1 == m {
            break;
        }

        let threshold = opts.breakdown_tol * scale.max(a.abs());
        let mut next = None;
        if w.norm() > threshold {
            let (mut w_perp, gamma) = mpk_orthogonalize(&w, &basis)?;
            let mut dependent = false;
            if gamma < opts.gamma_max {
                match mpk_orthogonalize(&w_perp, &basis) {
                    Ok((w2, gamma2)) => {
                        if gamma2 < opts.gamma_min && w2.norm() > threshold {
                            dependent = true;
                        }
                        w_perp = w2;
                    }
                    Err(Error::DegenerateProbe) => w_perp = DVector::zeros(n),
                    Err(e) => return Err(e),
                }
            }
            if dependent {
                return Ok(Attempt::Restart);
            }
            let beta = w_perp.norm();
            if beta > threshold {
                next = Some((beta, w_perp / beta));
            }
        }
        let (beta, u_next) = match next {
            Some(pair) => pair,
            None => {
                breakdowns += 1;
                match fresh_orthogonal(n, &basis, &mut rng) {
                    Some(v) => (0.0, v),
                    None => return Ok(Attempt::Restart),
                }
            }
        };
        offdiag.push(beta);
        basis.push(u_next);
        beta_prev = beta;
    }
    Ok(Attempt::Done(
        TridiagonalResult { diag, offdiag },
        KrylovBasis { columns: basis },
        breakdowns,
    ))
}

/// Lanczos with MPK selective reorthogonalisation and restarts.
///
/// Attempt `z` starts from a Gaussian vector seeded by `(opts.seed, z)`.
pub fn lanczos_mpk(oracle: &dyn HvpOracle, m: usize, opts: &LanczosOptions) -> Result<LanczosOutput> {
    let n = oracle.dim();
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("order {m} outside 1..={n}")));
    }
    if opts.max_attempts == 0 {
        return Err(Error::InvalidInput("max_attempts must be at least 1".into()));
    }
    for attempt in 0..opts.max_attempts {
        if let Attempt::Done(tridiagonal, basis, breakdowns) = lanczos_attempt(oracle, m, opts, attempt)? {
            return Ok(LanczosOutput {
                tridiagonal,
                basis,
                attempt,
                breakdowns,
            });
        }
    }
    Err(Error::LanczosExhausted {
        order: m,
        restarts: opts.max_attempts,
    })
}

/// Eigen-decomposition of a symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct TridiagEigen {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]` in Krylov coordinates.
    pub vectors: Option<DMatrix<f64>>,
}

/// Implicit-shift QL iteration on a symmetric tridiagonal matrix.
pub fn tridiag_eigen(t: &TridiagonalResult, want_vectors: bool) -> TridiagEigen {
    let n = t.order();
    let mut d = t.diag.clone();
    let mut e = t.offdiag.clone();
    e.push(0.0);
    let mut z = want_vectors.then(|| DMatrix::<f64>::identity(n, n));

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l || iter >= 200 {
                break;
            }
            iter += 1;
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r } else { -r });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = z.as_mut() {
                    for k in 0..n {
                        let zk1 = z[(k, i + 1)];
                        let zk = z[(k, i)];
                        z[(k, i + 1)] = s * zk + c * zk1;
                        z[(k, i)] = c * zk - s * zk1;
                    }
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let values = order.iter().map(|&k| d[k]).collect();
    let vectors = z.map(|z| DMatrix::from_columns(&order.iter().map(|&k| z.column(k).into_owned()).collect::<Vec<_>>()));
    TridiagEigen { values, vectors }
}

/// Ritz values, and optionally Ritz vectors with explicit residuals, from an order-`m` run.
pub fn spectrum_estimate(
    oracle: &dyn HvpOracle,
    m: usize,
    opts: &LanczosOptions,
    with_residuals: bool,
) -> Result<SpectrumEstimate> {
    let out = lanczos_mpk(oracle, m, opts)?;
    let eig = tridiag_eigen(&out.tridiagonal, true);
    let q = eig.vectors.as_ref().expect("vectors requested");
    let u = out.basis.to_matrix();
    let ritz_vector = |k: usize| {
        let y = &u * q.column(k);
        let norm = y.norm();
        y / norm
    };
    let v1 = ritz_vector(0);
    let residuals = with_residuals.then(|| {
        (0..eig.values.len())
            .map(|k| {
                let y = ritz_vector(k);
                (oracle.apply(&y) - &y * eig.values[k]).norm()
            })
            .collect()
    });
    Ok(SpectrumEstimate {
        top_pair: Some((eig.values[0], v1)),
        ritz_values: eig.values,
        residuals,
    })
}

/// Leading eigenpair `(λ₁, v₁)` with `v₁ = U q_top` normalised.
pub fn top_eigenpair(oracle: &dyn HvpOracle, m: usize, seed: u64) -> Result<(f64, DVector<f64>)> {
    let m = m.min(oracle.dim());
    let est = spectrum_estimate(oracle, m, &LanczosOptions::with_seed(seed), false)?;
    Ok(est.top_pair.expect("top pair always computed"))
}

/// Central second difference of `loss` along `v`.
pub fn directional_curvature<F>(loss: F, theta: &DVector<f64>, v: &DVector<f64>, h: f64) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step h = {h} must be positive")));
    }
    let plus = loss(&(theta + v * h));
    let mid = loss(theta);
    let minus = loss(&(theta - v * h));
    if !(plus.is_finite() && mid.is_finite() && minus.is_finite()) {
        return Err(Error::NonFinite("loss evaluation".into()));
    }
    Ok((plus - 2.0 * mid + minus) / (h * h))
}

/// Finite-difference surrogate of the curvature change along `v₁`:
/// `(λ₁(θ+hv₁) − 2λ₁(θ) + λ₁(θ−hv₁))/h²`.
pub fn ut_proxy<F>(mut lambda_along: F, theta: &DVector<f64>, v1: &DVector<f64>, h: f64) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step h = {h} must be positive")));
    }
    let plus = lambda_along(&(theta + v1 * h))?;
    let mid = lambda_along(theta)?;
    let minus = lambda_along(&(theta - v1 * h))?;
    Ok((plus - 2.0 * mid + minus) / (h * h))
}
