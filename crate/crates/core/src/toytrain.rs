//! Desk-scale MLP training with curvature diagnostics.
//!
//! Parameters are one flat vector. Layer `l` holds its `out × in` weight
//! matrix (column-major) followed by its bias. Losses are means over the
//! dataset; the MSE per example is `½‖f − y‖²`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind, Problem};
use crate::seed::{derive_seed, rng_from_seed};
use crate::spectral::{lanczos_mpk, top_eigenpair, tridiag_eigen, HvpOracle, LanczosOptions};
use crate::subspace::{misalignment_score, OrthonormalBasis};
use crate::walk::stats::spearman;

/// Largest dataset accepted.
pub const MAX_EXAMPLES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Identity => z,
            Self::Relu => z.max(0.0),
        }
    }

    fn slope(self, z: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Relu => f64::from(u8::from(z > 0.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrainLoss {
    Mse,
    /// Softmax cross-entropy against (possibly soft) target distributions.
    Ce,
}

/// Layer widths and per-layer activations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpArch {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpArch {
    pub fn new(dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidInput(format!(
                "need >= 2 positive dims and one activation per layer, got dims {dims:?} with {} activations",
                activations.len()
            )));
        }
        Ok(Self { dims, activations })
    }

    /// Hidden layers use `hidden`, the output layer is linear.
    pub fn with_hidden(dims: Vec<usize>, hidden: Activation) -> Result<Self> {
        let layers = dims.len().saturating_sub(1);
        let mut acts = vec![hidden; layers];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Identity;
        }
        Self::new(dims, acts)
    }

    pub fn layers(&self) -> usize {
        self.activations.len()
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    fn offset(&self, layer: usize) -> usize {
        self.dims.windows(2).take(layer).map(|w| w[1] * (w[0] + 1)).sum()
    }

    fn layer(&self, theta: &DVector<f64>, l: usize) -> (DMatrix<f64>, DVector<f64>) {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let off = self.offset(l);
        let w = DMatrix::from_column_slice(n_out, n_in, &theta.as_slice()[off..off + n_out * n_in]);
        let b = DVector::from_column_slice(&theta.as_slice()[off + n_out * n_in..off + n_out * (n_in + 1)]);
        (w, b)
    }

    fn write_layer(&self, out: &mut DVector<f64>, l: usize, w: &DMatrix<f64>, b: &DVector<f64>) {
        let off = self.offset(l);
        let nw = w.len();
        out.as_mut_slice()[off..off + nw].copy_from_slice(w.as_slice());
        out.as_mut_slice()[off + nw..off + nw + b.len()].copy_from_slice(b.as_slice());
    }

    fn check(&self, theta: &DVector<f64>, data: &Dataset) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        if data.inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: data.inputs.ncols(),
            });
        }
        if data.targets.ncols() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: data.targets.ncols(),
            });
        }
        Ok(())
    }

    /// Pre-activations `Z_l` and activations `A_l` (row per example); `A_0` is the input.
    fn forward_cache(&self, theta: &DVector<f64>, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut zs = Vec::with_capacity(self.layers());
        let mut acts = vec![x.clone()];
        for l in 0..self.layers() {
            let (w, b) = self.layer(theta, l);
            let mut z = &acts[l] * w.transpose();
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            let act = self.activations[l];
            acts.push(z.map(|v| act.apply(v)));
            zs.push(z);
        }
        (zs, acts)
    }

    /// Network outputs, one row per example.
    pub fn forward(&self, theta: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (_, mut acts) = self.forward_cache(theta, x);
        acts.pop().expect("at least one layer")
    }

    /// Mean loss over the dataset.
    pub fn loss(&self, theta: &DVector<f64>, data: &Dataset, kind: TrainLoss) -> Result<f64> {
        self.check(theta, data)?;
        let f = self.forward(theta, &data.inputs);
        let k = data.len() as f64;
        Ok(match kind {
            TrainLoss::Mse => 0.5 * (&f - &data.targets).norm_squared() / k,
            TrainLoss::Ce => {
                let mut total = 0.0;
                for (row, y) in f.row_iter().zip(data.targets.row_iter()) {
                    let max = row.max();
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    total += y.iter().zip(row.iter()).map(|(yi, fi)| yi * (lse - fi)).sum::<f64>();
                }
                total / k
            }
        })
    }

    /// `∂ℓ/∂F` averaged over examples, plus the softmax rows for CE.
    fn output_grad(&self, f: &DMatrix<f64>, data: &Dataset, kind: TrainLoss) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        let k = data.len() as f64;
        match kind {
            TrainLoss::Mse => ((f - &data.targets) / k, None),
            TrainLoss::Ce => {
                let mut p = f.clone();
                for mut row in p.row_iter_mut() {
                    let max = row.max();
                    row.apply(|v| *v = (*v - max).exp());
                    let s = row.sum();
                    row /= s;
                }
                let mut g = p.clone();
                for (mut row, y) in g.row_iter_mut().zip(data.targets.row_iter()) {
                    let mass = y.sum();
                    row *= mass;
                    row -= y;
                }
                (g / k, Some(p))
            }
        }
    }

    /// Reverse-mode gradient.
    pub fn grad(&self, theta: &DVector<f64>, data: &Dataset, kind: TrainLoss) -> Result<DVector<f64>> {
        self.check(theta, data)?;
        let (zs, acts) = self.forward_cache(theta, &data.inputs);
        let (g_out, _) = self.output_grad(&acts[self.layers()], data, kind);
        let mut out = DVector::zeros(theta.len());
        let mut delta = hadamard_slope(g_out, &zs[self.layers() - 1], self.activations[self.layers() - 1]);
        for l in (0..self.layers()).rev() {
            let gw = delta.transpose() * &acts[l];
            let gb = column_sums(&delta);
            self.write_layer(&mut out, l, &gw, &gb);
            if l > 0 {
                let (w, _) = self.layer(theta, l);
                delta = hadamard_slope(&delta * &w, &zs[l - 1], self.activations[l - 1]);
            }
        }
        Ok(out)
    }

    /// Exact Hessian-vector product by forward-over-reverse (R-operator) differentiation.
    ///
    /// ReLU is treated as piecewise linear, so its second derivative is zero.
    pub fn hvp_exact(&self, theta: &DVector<f64>, data: &Dataset, kind: TrainLoss, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(theta, data)?;
        if v.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: v.len(),
            });
        }
        let n_layers = self.layers();
        let (zs, acts) = self.forward_cache(theta, &data.inputs);
        let k = data.len();

        let mut r_acts = vec![DMatrix::zeros(k, self.input_dim())];
        for l in 0..n_layers {
            let (w, _) = self.layer(theta, l);
            let (vw, vb) = self.layer(v, l);
            let mut rz: DMatrix<f64> = &acts[l] * vw.transpose() + &r_acts[l] * w.transpose();
            for mut row in rz.row_iter_mut() {
                row += vb.transpose();
            }
            r_acts.push(hadamard_slope(rz, &zs[l], self.activations[l]));
        }

        let (g_out, probs) = self.output_grad(&acts[n_layers], data, kind);
        let rf = &r_acts[n_layers];
        let r_g_out = match probs {
            None => rf / k as f64,
            Some(p) => {
                let mut r = DMatrix::zeros(k, self.output_dim());
                for i in 0..k {
                    let mass = data.targets.row(i).sum();
                    let pr = p.row(i).dot(&rf.row(i));
                    for j in 0..self.output_dim() {
                        r[(i, j)] = mass * p[(i, j)] * (rf[(i, j)] - pr);
                    }
                }
                r / k as f64
            }
        };

        let last = n_layers - 1;
        let mut delta = hadamard_slope(g_out, &zs[last], self.activations[last]);
        let mut r_delta = hadamard_slope(r_g_out, &zs[last], self.activations[last]);
        let mut out = DVector::zeros(theta.len());
        for l in (0..n_layers).rev() {
            let rgw = r_delta.transpose() * &acts[l] + delta.transpose() * &r_acts[l];
            let rgb = column_sums(&r_delta);
            self.write_layer(&mut out, l, &rgw, &rgb);
            if l > 0 {
                let (w, _) = self.layer(theta, l);
                let (vw, _) = self.layer(v, l);
                let next_r = hadamard_slope(&r_delta * &w + &delta * &vw, &zs[l - 1], self.activations[l - 1]);
                delta = hadamard_slope(&delta * &w, &zs[l - 1], self.activations[l - 1]);
                r_delta = next_r;
            }
        }
        Ok(out)
    }

    /// `(∇L(θ+hv) − ∇L(θ−hv))/(2h)` with `h = 1e-5(1 + ‖θ‖_∞)`.
    pub fn hvp_fd(&self, theta: &DVector<f64>, data: &Dataset, kind: TrainLoss, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.iter().all(|&x| x == 0.0) {
            return Ok(DVector::zeros(theta.len()));
        }
        let h = 1e-5 * (1.0 + theta.amax());
        let plus = self.grad(&(theta + v * h), data, kind)?;
        let minus = self.grad(&(theta - v * h), data, kind)?;
        let out = (plus - minus) / (2.0 * h);
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("finite-difference HVP".into()));
        }
        Ok(out)
    }

    pub fn hvp(&self, theta: &DVector<f64>, data: &Dataset, kind: TrainLoss, v: &DVector<f64>, method: HvpMethod) -> Result<DVector<f64>> {
        match method {
            HvpMethod::FiniteDifference => self.hvp_fd(theta, data, kind, v),
            HvpMethod::Exact => self.hvp_exact(theta, data, kind, v),
        }
    }

    /// Dense Hessian, column by column from exact HVPs.
    pub fn dense_hessian(&self, theta: &DVector<f64>, data: &Dataset, kind: TrainLoss) -> Result<DMatrix<f64>> {
        let n = theta.len();
        let mut h = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            h.set_column(j, &self.hvp_exact(theta, data, kind, &e)?);
        }
        Ok(h)
    }
}

fn hadamard_slope(mut m: DMatrix<f64>, z: &DMatrix<f64>, act: Activation) -> DMatrix<f64> {
    if act == Activation::Relu {
        m.zip_apply(z, |g, z| *g *= act.slope(z));
    }
    m
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// How Hessian-vector products are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HvpMethod {
    FiniteDifference,
    Exact,
}

/// Architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub arch: MlpArch,
    pub params: DVector<f64>,
}

impl MlpModel {
    pub fn new(arch: MlpArch, params: DVector<f64>) -> Result<Self> {
        if params.len() != arch.param_count() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "expected {} finite parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self { arch, params })
    }

    /// He-normal weights (`N(0, 2/fan_in)`), zero biases.
    pub fn init(arch: MlpArch, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut params = DVector::zeros(arch.param_count());
        for l in 0..arch.layers() {
            let (n_in, n_out) = (arch.dims[l], arch.dims[l + 1]);
            let sd = (2.0 / n_in as f64).sqrt();
            let w = DMatrix::from_fn(n_out, n_in, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
            arch.write_layer(&mut params, l, &w, &DVector::zeros(n_out));
        }
        Self { arch, params }
    }
}

/// Mean loss at the model's parameters.
pub fn forward_loss(model: &MlpModel, data: &Dataset, kind: TrainLoss) -> Result<f64> {
    model.arch.loss(&model.params, data, kind)
}

pub fn grad(model: &MlpModel, data: &Dataset, kind: TrainLoss) -> Result<DVector<f64>> {
    model.arch.grad(&model.params, data, kind)
}

/// Finite-difference HVP at the model's parameters.
pub fn hvp(model: &MlpModel, data: &Dataset, kind: TrainLoss, v: &DVector<f64>) -> Result<DVector<f64>> {
    model.arch.hvp_fd(&model.params, data, kind, v)
}

/// Hessian of the training loss at fixed parameters, as a Lanczos oracle.
pub struct LossHessian<'a> {
    pub arch: &'a MlpArch,
    pub theta: &'a DVector<f64>,
    pub data: &'a Dataset,
    pub loss: TrainLoss,
    pub method: HvpMethod,
}

impl HvpOracle for LossHessian<'_> {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Non-finite results propagate as NaN entries and are caught by the caller.
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.arch
            .hvp(self.theta, self.data, self.loss, v, self.method)
            .unwrap_or_else(|_| DVector::from_element(v.len(), f64::NAN))
    }
}

/// Full-batch MLP loss as an optimizer-driver problem; curvature from an order-`lanczos_order` run.
#[derive(Debug, Clone)]
pub struct MlpProblem<'a> {
    pub arch: &'a MlpArch,
    pub data: &'a Dataset,
    pub loss: TrainLoss,
    pub method: HvpMethod,
    pub lanczos_order: usize,
    pub seed: u64,
}

impl Problem for MlpProblem<'_> {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        self.arch.loss(theta, self.data, self.loss).unwrap_or(f64::NAN)
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.arch
            .grad(theta, self.data, self.loss)
            .unwrap_or_else(|_| DVector::from_element(theta.len(), f64::NAN))
    }

    fn top_curvature(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let oracle = LossHessian {
            arch: self.arch,
            theta,
            data: self.data,
            loss: self.loss,
            method: self.method,
        };
        top_eigenpair(&oracle, self.lanczos_order, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DatasetKind {
    Blobs { seed: u64 },
    Csv,
}

/// Inputs `k × d` and targets `k × c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub kind: DatasetKind,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>, kind: DatasetKind) -> Result<Self> {
        let k = inputs.nrows();
        if k == 0 || k > MAX_EXAMPLES || targets.nrows() != k {
            return Err(Error::InvalidInput(format!(
                "need 1..={MAX_EXAMPLES} examples with matching targets, got {k} inputs and {} targets",
                targets.nrows()
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset entries".into()));
        }
        Ok(Self { inputs, targets, kind })
    }

    /// Two Gaussian classes with means `±(separation/2)·1/√d` and unit covariance.
    ///
    /// Labels alternate, targets are one-hot.
    pub fn blobs(k: usize, d: usize, separation: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let shift = 0.5 * separation / (d.max(1) as f64).sqrt();
        let mut inputs = DMatrix::zeros(k, d);
        let mut targets = DMatrix::zeros(k, 2);
        for i in 0..k {
            let class = i % 2;
            let sign = if class == 0 { -1.0 } else { 1.0 };
            for j in 0..d {
                inputs[(i, j)] = sign * shift + rng.sample::<f64, _>(StandardNormal);
            }
            targets[(i, class)] = 1.0;
        }
        Self::new(inputs, targets, DatasetKind::Blobs { seed })
    }

    /// Headed CSV: feature columns followed by an integer class label; targets are one-hot.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let mut features: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("{} row {}: {e}", path.display(), line + 1)))
            };
            let values = record.iter().map(parse).collect::<Result<Vec<f64>>>()?;
            let Some((&label, row)) = values.split_last() else {
                return Err(Error::InvalidInput(format!("{} row {}: empty", path.display(), line + 1)));
            };
            if label < 0.0 || label.fract() != 0.0 || row.is_empty() {
                return Err(Error::InvalidInput(format!("{} row {}: bad label {label}", path.display(), line + 1)));
            }
            features.push(row.to_vec());
            labels.push(label as usize);
        }
        let d = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput(format!("{}: ragged rows", path.display())));
        }
        let k = features.len();
        let c = labels.iter().max().map_or(0, |m| m + 1).max(2);
        let inputs = DMatrix::from_fn(k, d, |i, j| features[i][j]);
        let targets = DMatrix::from_fn(k, c, |i, j| f64::from(u8::from(labels[i] == j)));
        Self::new(inputs, targets, DatasetKind::Csv)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Top Ritz pairs and the most negative Ritz value of one Lanczos run.
#[derive(Debug, Clone)]
pub struct CurvatureSnapshot {
    pub lambda_max: f64,
    pub lambda_2: Option<f64>,
    pub lambda_neg: f64,
    pub top_vectors: Vec<DVector<f64>>,
}

/// Lanczos of order `m` on the loss Hessian, keeping `top_k` Ritz vectors.
pub fn curvature_snapshot(hessian: &LossHessian<'_>, m: usize, top_k: usize, opts: &LanczosOptions) -> Result<CurvatureSnapshot> {
    let m = m.min(hessian.dim()).max(1);
    let out = lanczos_mpk(hessian, m, opts)?;
    let eig = tridiag_eigen(&out.tridiagonal, true);
    if eig.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Ritz values".into()));
    }
    let q = eig.vectors.as_ref().expect("vectors requested");
    let u = out.basis.to_matrix();
    let top_vectors = (0..top_k.min(eig.values.len()))
        .map(|j| {
            let y = &u * q.column(j);
            let n = y.norm();
            y / n
        })
        .collect();
    Ok(CurvatureSnapshot {
        lambda_max: eig.values[0],
        lambda_2: eig.values.get(1).copied(),
        lambda_neg: *eig.values.last().expect("m >= 1"),
        top_vectors,
    })
}

/// Self-stabilisation term `α = −∇L·∇λ_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfStab {
    pub alpha: f64,
    /// Estimated gap `λ₁ − λ₂`.
    pub gap: f64,
    /// False when the gap is at most `1e-6`, where `λ_max` is not differentiable.
    pub reliable: bool,
}

/// Central difference of `λ_max` along `ĝ = ∇L/‖∇L‖`, scaled by `−‖∇L‖`.
pub fn selfstab_alpha_at(arch: &MlpArch, theta: &DVector<f64>, data: &Dataset, kind: TrainLoss, diag: &DiagnosticsConfig, seed: u64) -> Result<SelfStab> {
    let g = arch.grad(theta, data, kind)?;
    let gn = g.norm();
    let snap = curvature_snapshot(
        &LossHessian {
            arch,
            theta,
            data,
            loss: kind,
            method: diag.hvp,
        },
        diag.lanczos_order,
        1,
        &LanczosOptions::with_seed(seed),
    )?;
    let gap = snap.lambda_2.map_or(f64::INFINITY, |l2| snap.lambda_max - l2);
    if gn == 0.0 {
        return Ok(SelfStab {
            alpha: 0.0,
            gap,
            reliable: gap > 1e-6,
        });
    }
    let dir = &g / gn;
    let h = diag.fd_step;
    let lam = |t: &DVector<f64>| lambda_max_from(arch, t, data, kind, diag, seed, &snap.top_vectors[0]);
    let d = (lam(&(theta + &dir * h))? - lam(&(theta - &dir * h))?) / (2.0 * h);
    Ok(SelfStab {
        alpha: -gn * d,
        gap,
        reliable: gap > 1e-6,
    })
}

/// [`selfstab_alpha_at`] at the model's parameters with default diagnostics.
pub fn selfstab_alpha(model: &MlpModel, data: &Dataset, kind: TrainLoss) -> Result<SelfStab> {
    selfstab_alpha_at(&model.arch, &model.params, data, kind, &DiagnosticsConfig::default(), 0)
}

fn lambda_max_from(arch: &MlpArch, theta: &DVector<f64>, data: &Dataset, kind: TrainLoss, diag: &DiagnosticsConfig, seed: u64, start: &DVector<f64>) -> Result<f64> {
    let opts = LanczosOptions {
        start: Some(start.clone()),
        ..LanczosOptions::with_seed(seed)
    };
    let h = LossHessian {
        arch,
        theta,
        data,
        loss: kind,
        method: diag.hvp,
    };
    Ok(curvature_snapshot(&h, diag.lanczos_order, 1, &opts)?.lambda_max)
}

/// Which diagnostics run, and how often.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsConfig {
    /// Cadence in epochs; `None` means every epoch up to 500 epochs, every 5th beyond.
    pub every: Option<usize>,
    pub lanczos_order: usize,
    /// Ritz vectors kept for subspace scores.
    pub top_k: usize,
    pub hvp: HvpMethod,
    pub u_proxy: bool,
    pub selfstab: bool,
    /// Step for the curvature finite differences (U proxy and `∇λ_max`).
    pub fd_step: f64,
    /// Constant in `δ_t = ηλ_max − C`.
    pub c_eos: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            every: None,
            lanczos_order: 30,
            top_k: 2,
            hvp: HvpMethod::FiniteDifference,
            u_proxy: true,
            selfstab: false,
            fd_step: 1e-2,
            c_eos: 2.0,
        }
    }
}

impl DiagnosticsConfig {
    pub fn cadence(&self, epochs: usize) -> usize {
        self.every.unwrap_or(if epochs <= 500 { 1 } else { 5 }).max(1)
    }
}

/// Mid-run change of learning rate or optimizer, applied before the update of `epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Intervention {
    Eta { epoch: usize, eta: f64 },
    Optimizer { epoch: usize, kind: OptimizerKind },
}

impl Intervention {
    pub fn epoch(&self) -> usize {
        match *self {
            Self::Eta { epoch, .. } | Self::Optimizer { epoch, .. } => epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub loss: TrainLoss,
    pub optimizer: OptimizerKind,
    pub opt: OptimizerConfig,
    pub epochs: usize,
    pub seed: u64,
    pub diagnostics: DiagnosticsConfig,
    pub interventions: Vec<Intervention>,
}

/// One epoch: the state before that epoch's update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub eta: f64,
    pub loss: f64,
    pub lambda_max: Option<f64>,
    pub lambda_neg: Option<f64>,
    /// `ηλ_max − C`.
    pub delta_t: Option<f64>,
    pub u_proxy: Option<f64>,
    /// `max(|U_t|/|U_next|, |U_next|/|U_t|)` against the next diagnosed epoch.
    pub gamma_u_abs: Option<f64>,
    /// Sign of `|U_next| − |U_t|`; `None` when equal or unavailable.
    pub xi_sign: Option<i8>,
    /// `‖θ_t − θ*‖` with `θ* = (θ_t + θ_{t−1})/2`.
    pub theta_osc: Option<f64>,
    /// Misalignment of the top-k Ritz subspace against the basis at the latest instability onset.
    pub subspace_score_vs_baseline: Option<f64>,
    pub alpha_selfstab: Option<f64>,
    pub alpha_reliable: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TrainStatus {
    Completed,
    /// Loss exceeded `1e30` (or became non-finite) at this epoch; later epochs are missing.
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub status: TrainStatus,
    #[serde(skip)]
    pub final_params: DVector<f64>,
}

/// Aggregates used by the summary CSV and the correlation checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub max_lambda: f64,
    pub instability_epochs: usize,
    /// Spearman correlation of `|γ_U|` and `λ_max` over instability epochs.
    pub spearman_gamma_lambda: Option<f64>,
    pub xi_positive: usize,
    pub xi_negative: usize,
    pub diverged: bool,
}

impl TrainLog {
    /// Diagnosed epochs with `δ_t > 0` and a defined `|γ_U|`, as `(|γ_U|, λ_max, ξ)`.
    pub fn instability_pairs(&self) -> Vec<(f64, f64, Option<i8>)> {
        self.records
            .iter()
            .filter(|r| r.delta_t.is_some_and(|d| d > 0.0))
            .filter_map(|r| Some((r.gamma_u_abs?, r.lambda_max?, r.xi_sign)))
            .collect()
    }

    pub fn summary(&self) -> TrainSummary {
        let pairs = self.instability_pairs();
        let (g, l): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| (p.0, p.1)).unzip();
        let rho = (pairs.len() >= 3).then(|| spearman(&g, &l)).filter(|r| r.is_finite());
        TrainSummary {
            epochs_run: self.records.len(),
            final_loss: self.records.last().map_or(f64::NAN, |r| r.loss),
            max_lambda: self.records.iter().filter_map(|r| r.lambda_max).fold(f64::NEG_INFINITY, f64::max),
            instability_epochs: self.records.iter().filter(|r| r.delta_t.is_some_and(|d| d > 0.0)).count(),
            spearman_gamma_lambda: rho,
            xi_positive: pairs.iter().filter(|p| p.2 == Some(1)).count(),
            xi_negative: pairs.iter().filter(|p| p.2 == Some(-1)).count(),
            diverged: matches!(self.status, TrainStatus::Diverged { .. }),
        }
    }
}

const DIVERGENCE_LOSS: f64 = 1e30;

/// Full-batch deterministic training with periodic curvature diagnostics.
///
/// Lanczos at epoch `e` is seeded with `derive_seed(seed, e)`; the U proxy and
/// `∇λ_max` differences restart Lanczos from the current top Ritz vector.
pub fn train(model: &MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidInput("epochs must be >= 1".into()));
    }
    let arch = &model.arch;
    arch.check(&model.params, data)?;
    let diag = &cfg.diagnostics;
    let cadence = diag.cadence(cfg.epochs);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.opt, model.params.len(), derive_seed(cfg.seed, u64::MAX))?;
    let mut theta = model.params.clone();
    let mut prev_theta: Option<DVector<f64>> = None;
    let mut baseline: Option<OrthonormalBasis> = None;
    let mut prev_delta: Option<f64> = None;
    let mut records: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut status = TrainStatus::Completed;

    for epoch in 0..cfg.epochs {
        for iv in cfg.interventions.iter().filter(|iv| iv.epoch() == epoch) {
            match *iv {
                Intervention::Eta { eta, .. } => {
                    opt.cfg.eta = eta;
                    opt.cfg.validate()?;
                }
                Intervention::Optimizer { kind, .. } => {
                    opt = Optimizer::new(kind, opt.cfg, theta.len(), derive_seed(cfg.seed, u64::MAX - 1 - epoch as u64))?;
                }
            }
        }
        let loss = arch.loss(&theta, data, cfg.loss)?;
        let mut rec = EpochRecord {
            epoch,
            eta: opt.cfg.eta,
            loss,
            lambda_max: None,
            lambda_neg: None,
            delta_t: None,
            u_proxy: None,
            gamma_u_abs: None,
            xi_sign: None,
            theta_osc: prev_theta.as_ref().map(|p| (&theta - p).norm() / 2.0),
            subspace_score_vs_baseline: None,
            alpha_selfstab: None,
            alpha_reliable: None,
        };
        if !(loss.is_finite() && loss <= DIVERGENCE_LOSS) {
            records.push(rec);
            status = TrainStatus::Diverged { epoch };
            break;
        }

        if epoch % cadence == 0 {
            let seed = derive_seed(cfg.seed, epoch as u64);
            let hess = LossHessian {
                arch,
                theta: &theta,
                data,
                loss: cfg.loss,
                method: diag.hvp,
            };
            let snap = curvature_snapshot(&hess, diag.lanczos_order, diag.top_k.max(1), &LanczosOptions::with_seed(seed))?;
            let delta = opt.cfg.eta * snap.lambda_max - diag.c_eos;
            rec.lambda_max = Some(snap.lambda_max);
            rec.lambda_neg = Some(snap.lambda_neg);
            rec.delta_t = Some(delta);

            let basis = OrthonormalBasis::orthonormalize(DMatrix::from_columns(&snap.top_vectors))?;
            if delta > 0.0 && !prev_delta.is_some_and(|d| d > 0.0) {
                baseline = Some(basis.clone());
            }
            if let Some(b) = &baseline {
                rec.subspace_score_vs_baseline = Some(misalignment_score(b, &basis)?);
            }
            prev_delta = Some(delta);

            if diag.u_proxy {
                let v1 = &snap.top_vectors[0];
                let h = diag.fd_step;
                let plus = lambda_max_from(arch, &(&theta + v1 * h), data, cfg.loss, diag, seed, v1)?;
                let minus = lambda_max_from(arch, &(&theta - v1 * h), data, cfg.loss, diag, seed, v1)?;
                let mid = lambda_max_from(arch, &theta, data, cfg.loss, diag, seed, v1)?;
                rec.u_proxy = Some((plus - 2.0 * mid + minus) / (h * h));
            }
            if diag.selfstab {
                let s = selfstab_alpha_at(arch, &theta, data, cfg.loss, diag, seed)?;
                rec.alpha_selfstab = Some(s.alpha);
                rec.alpha_reliable = Some(s.reliable);
            }
        }
        records.push(rec);

        let g = arch.grad(&theta, data, cfg.loss)?;
        let next = opt.step(&theta, &g);
        prev_theta = Some(std::mem::replace(&mut theta, next));
    }

    fill_gamma_u(&mut records);
    Ok(TrainLog {
        records,
        status,
        final_params: theta,
    })
}

fn fill_gamma_u(records: &mut [EpochRecord]) {
    let diagnosed: Vec<usize> = (0..records.len()).filter(|&i| records[i].u_proxy.is_some()).collect();
    for w in diagnosed.windows(2) {
        let (Some(a), Some(b)) = (records[w[0]].u_proxy, records[w[1]].u_proxy) else {
            continue;
        };
        let (a, b) = (a.abs(), b.abs());
        if a > 0.0 && b > 0.0 {
            records[w[0]].gamma_u_abs = Some((a / b).max(b / a));
        }
        records[w[0]].xi_sign = match b.partial_cmp(&a) {
            Some(std::cmp::Ordering::Greater) => Some(1),
            Some(std::cmp::Ordering::Less) => Some(-1),
            _ => None,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn tiny(act: Activation, seed: u64) -> (MlpModel, Dataset) {
        let arch = MlpArch::with_hidden(vec![3, 4, 2], act).unwrap();
        let model = MlpModel::init(arch, seed);
        let data = Dataset::blobs(12, 3, 2.0, seed + 1).unwrap();
        (model, data)
    }

    #[test]
    fn arch_bookkeeping() {
        let arch = MlpArch::with_hidden(vec![10, 32, 32, 2], Activation::Relu).unwrap();
        assert_eq!(arch.param_count(), 1474);
        assert_eq!(arch.activations, vec![Activation::Relu, Activation::Relu, Activation::Identity]);
        assert!(MlpArch::new(vec![3], vec![]).is_err());
        assert!(MlpArch::new(vec![3, 2], vec![]).is_err());
    }

    #[test]
    fn loss_examples() {
        let arch = MlpArch::new(vec![2, 1], vec![Activation::Identity]).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.0]);
        let data = Dataset::new(x.clone(), y.clone(), DatasetKind::Csv).unwrap();
        let theta = DVector::from_column_slice(&[0.5, -1.0, 0.25]);
        let pred = &x * DVector::from_column_slice(&[0.5, -1.0]) + DVector::from_element(3, 0.25);
        let want = 0.5 * (pred - y.column(0)).norm_squared() / 3.0;
        assert!((arch.loss(&theta, &data, TrainLoss::Mse).unwrap() - want).abs() < 1e-15);

        let zero_data = Dataset::new(x, DMatrix::zeros(3, 1), DatasetKind::Csv).unwrap();
        assert_eq!(arch.loss(&DVector::zeros(3), &zero_data, TrainLoss::Mse).unwrap(), 0.0);

        let arch3 = MlpArch::new(vec![2, 3], vec![Activation::Identity]).unwrap();
        let data3 = Dataset::new(DMatrix::from_element(4, 2, 1.0), DMatrix::from_fn(4, 3, |i, j| f64::from(u8::from(i % 3 == j))), DatasetKind::Csv).unwrap();
        let ce = arch3.loss(&DVector::zeros(9), &data3, TrainLoss::Ce).unwrap();
        assert!((ce - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_net_is_linear() {
        let (model, data) = tiny(Activation::Identity, 4);
        let f = |x: &DMatrix<f64>| model.arch.forward(&model.params, x);
        let (a, b) = (data.inputs.rows(0, 1).into_owned(), data.inputs.rows(1, 1).into_owned());
        let lhs = f(&(&a * 2.0 - &b * 3.0));
        let f0 = f(&DMatrix::zeros(1, 3));
        let rhs = (f(&a) - &f0) * 2.0 - (f(&b) - &f0) * 3.0 + f0;
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (act, kind) in [(Activation::Relu, TrainLoss::Ce), (Activation::Relu, TrainLoss::Mse), (Activation::Identity, TrainLoss::Mse)] {
            let (model, data) = tiny(act, 7);
            let g = grad(&model, &data, kind).unwrap();
            let mut rng = rng_from_seed(8);
            for _ in 0..20 {
                let i = rng.random_range(0..model.params.len());
                let h = 1e-6;
                let mut p = model.params.clone();
                p[i] += h;
                let up = model.arch.loss(&p, &data, kind).unwrap();
                p[i] -= 2.0 * h;
                let down = model.arch.loss(&p, &data, kind).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3), "{act:?} {kind:?} i={i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_gradient() {
        let arch = MlpArch::with_hidden(vec![2, 3, 1], Activation::Identity).unwrap();
        let model = MlpModel::init(arch, 1);
        let data = Dataset::new(DMatrix::zeros(5, 2), DMatrix::zeros(5, 1), DatasetKind::Csv).unwrap();
        let zero = MlpModel::new(model.arch.clone(), DVector::zeros(model.params.len())).unwrap();
        assert_eq!(grad(&zero, &data, TrainLoss::Mse).unwrap().amax(), 0.0);
    }

    #[test]
    fn linear_model_gradient_and_hessian_are_analytic() {
        let arch = MlpArch::new(vec![3, 1], vec![Activation::Identity]).unwrap();
        let data = Dataset::blobs(10, 3, 1.0, 2).unwrap();
        let y = data.targets.column(0).into_owned();
        let data = Dataset::new(data.inputs.clone(), DMatrix::from_column_slice(10, 1, y.as_slice()), DatasetKind::Csv).unwrap();
        let xa = data.inputs.clone().insert_column(3, 1.0);
        let h = xa.transpose() * &xa / 10.0;
        let theta = DVector::from_column_slice(&[0.3, -0.2, 0.1, 0.05]);
        let g = arch.grad(&theta, &data, TrainLoss::Mse).unwrap();
        let want = &h * &theta - xa.transpose() * &y / 10.0;
        assert!((g - want).amax() < 1e-12);
        let dense = arch.dense_hessian(&theta, &data, TrainLoss::Mse).unwrap();
        assert!((&dense - &h).amax() < 1e-12);
        let v = DVector::from_column_slice(&[1.0, 2.0, -1.0, 0.5]);
        assert!((arch.hvp_fd(&theta, &data, TrainLoss::Mse, &v).unwrap() - &h * &v).amax() < 1e-6);
    }

    #[test]
    fn exact_hvp_matches_gradient_differences() {
        for (act, kind) in [(Activation::Relu, TrainLoss::Ce), (Activation::Identity, TrainLoss::Ce), (Activation::Relu, TrainLoss::Mse)] {
            let (model, data) = tiny(act, 12);
            let mut rng = rng_from_seed(13);
            let v = DVector::from_fn(model.params.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let exact = model.arch.hvp_exact(&model.params, &data, kind, &v).unwrap();
            let fd = hvp(&model, &data, kind, &v).unwrap();
            assert!((&exact - &fd).amax() <= 1e-6 * exact.amax().max(1.0), "{act:?} {kind:?}");
        }
    }

    #[test]
    fn hvp_is_linear_symmetric_and_zero_on_zero() {
        let (model, data) = tiny(Activation::Relu, 3);
        let n = model.params.len();
        assert_eq!(hvp(&model, &data, TrainLoss::Ce, &DVector::zeros(n)).unwrap(), DVector::zeros(n));
        let mut rng = rng_from_seed(5);
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let hv = hvp(&model, &data, TrainLoss::Ce, &v).unwrap();
        let hw = hvp(&model, &data, TrainLoss::Ce, &w).unwrap();
        let combo = hvp(&model, &data, TrainLoss::Ce, &(&v * 2.0 - &w * 0.5)).unwrap();
        assert!((combo - (&hv * 2.0 - &hw * 0.5)).amax() < 1e-6 * hv.amax().max(1.0));
        let oracle = LossHessian {
            arch: &model.arch,
            theta: &model.params,
            data: &data,
            loss: TrainLoss::Ce,
            method: HvpMethod::FiniteDifference,
        };
        assert!(crate::spectral::symmetry_probe(&oracle, 5, 1) < 1e-6);
    }

    #[test]
    fn lanczos_snapshot_matches_dense_hessian() {
        let (model, data) = tiny(Activation::Relu, 21);
        let dense = model.arch.dense_hessian(&model.params, &data, TrainLoss::Ce).unwrap();
        let eig = SymmetricEigen::new(dense.clone());
        let sym = (&dense - dense.transpose()).amax();
        assert!(sym < 1e-12);
        let oracle = LossHessian {
            arch: &model.arch,
            theta: &model.params,
            data: &data,
            loss: TrainLoss::Ce,
            method: HvpMethod::Exact,
        };
        let snap = curvature_snapshot(&oracle, model.params.len(), 2, &LanczosOptions::with_seed(1)).unwrap();
        assert!((snap.lambda_max - eig.eigenvalues.max()).abs() < 1e-8);
        assert!((snap.lambda_neg - eig.eigenvalues.min()).abs() < 1e-8);
    }

    #[test]
    fn quadratic_surrogate_valley_jumping_and_descent() {
        let arch = MlpArch::new(vec![1, 1], vec![Activation::Identity]).unwrap();
        let data = Dataset::new(DMatrix::from_element(1, 1, 0.0), DMatrix::zeros(1, 1), DatasetKind::Csv).unwrap();
        let params = DVector::from_column_slice(&[0.0, 1.0]);
        let model = MlpModel::new(arch, params).unwrap();
        let run = |eta: f64| {
            let cfg = TrainConfig {
                loss: TrainLoss::Mse,
                optimizer: OptimizerKind::Gd,
                opt: OptimizerConfig { eta, ..Default::default() },
                epochs: 12,
                seed: 0,
                diagnostics: DiagnosticsConfig {
                    u_proxy: false,
                    ..Default::default()
                },
                interventions: vec![],
            };
            train(&model, &data, &cfg).unwrap()
        };
        let unstable = run(2.5);
        let biases: Vec<f64> = unstable.records.windows(2).map(|w| w[1].loss / w[0].loss).collect();
        assert!(biases.iter().all(|&r| (r - 2.25).abs() < 1e-12));
        assert!(unstable.records.iter().all(|r| r.lambda_max.is_some_and(|l| (l - 1.0).abs() < 1e-9)));
        assert!(unstable.records[1..].iter().all(|r| r.delta_t.unwrap() > 0.0 && r.theta_osc.unwrap() > 0.0));
        let stable = run(0.5);
        assert!(stable.records.windows(2).all(|w| w[1].loss < w[0].loss));
    }

    #[test]
    fn period_two_oscillation_is_isolated() {
        let arch = MlpArch::new(vec![1, 1], vec![Activation::Identity]).unwrap();
        let data = Dataset::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DatasetKind::Csv).unwrap();
        let model = MlpModel::new(arch, DVector::from_column_slice(&[0.0, 1.0])).unwrap();
        let cfg = TrainConfig {
            loss: TrainLoss::Mse,
            optimizer: OptimizerKind::Gd,
            opt: OptimizerConfig { eta: 2.001, ..Default::default() },
            epochs: 10,
            seed: 0,
            diagnostics: DiagnosticsConfig {
                u_proxy: false,
                every: Some(1000),
                ..Default::default()
            },
            interventions: vec![],
        };
        let log = train(&model, &data, &cfg).unwrap();
        let mut prev = 1.0f64;
        for r in &log.records[1..] {
            let b = (1.0 - 2.001f64).powi(r.epoch as i32);
            assert!(b.signum() != prev.signum());
            let osc = r.theta_osc.unwrap();
            assert!((osc - 2.001 * prev.abs() / 2.0).abs() < 1e-12);
            assert!(((b + prev) / 2.0).abs() < 1e-3 * prev.abs());
            prev = b;
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (model, data) = tiny(Activation::Relu, 30);
        let cfg = TrainConfig {
            loss: TrainLoss::Ce,
            optimizer: OptimizerKind::Gd,
            opt: OptimizerConfig { eta: 0.5, ..Default::default() },
            epochs: 8,
            seed: 9,
            diagnostics: DiagnosticsConfig {
                selfstab: true,
                ..Default::default()
            },
            interventions: vec![Intervention::Eta { epoch: 4, eta: 0.1 }],
        };
        let a = train(&model, &data, &cfg).unwrap();
        let b = train(&model, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 8);
        assert_eq!(a.records[5].eta, 0.1);
        assert!(a.records[..7].iter().all(|r| r.u_proxy.is_some_and(f64::is_finite)));
    }

    #[test]
    fn divergence_truncates() {
        let (model, data) = tiny(Activation::Identity, 2);
        let cfg = TrainConfig {
            loss: TrainLoss::Mse,
            optimizer: OptimizerKind::Gd,
            opt: OptimizerConfig { eta: 50.0, ..Default::default() },
            epochs: 500,
            seed: 0,
            diagnostics: DiagnosticsConfig {
                every: Some(1000),
                u_proxy: false,
                ..Default::default()
            },
            interventions: vec![],
        };
        let log = train(&model, &data, &cfg).unwrap();
        assert!(matches!(log.status, TrainStatus::Diverged { .. }));
        assert!(log.records.len() < 500);
    }

    #[test]
    fn selfstab_vanishes_on_quadratic_loss() {
        let arch = MlpArch::new(vec![3, 1], vec![Activation::Identity]).unwrap();
        let data = Dataset::blobs(8, 3, 1.0, 3).unwrap();
        let data = Dataset::new(data.inputs, data.targets.columns(0, 1).into_owned(), DatasetKind::Csv).unwrap();
        let model = MlpModel::init(arch, 4);
        let s = selfstab_alpha(&model, &data, TrainLoss::Mse).unwrap();
        assert!(s.alpha.abs() < 1e-6, "{s:?}");
        assert!(s.reliable);
    }

    #[test]
    fn selfstab_matches_constructed_curvature_change() {
        // Linear two-layer net f = b(wx + c) + d at x = 1, y = 0.
        let arch = MlpArch::new(vec![1, 1, 1], vec![Activation::Identity, Activation::Identity]).unwrap();
        let data = Dataset::new(DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1), DatasetKind::Csv).unwrap();
        let (w, b) = (0.3, 1.2);
        let model = MlpModel::new(arch.clone(), DVector::from_column_slice(&[w, 0.0, b, 0.0])).unwrap();
        let s = selfstab_alpha(&model, &data, TrainLoss::Mse).unwrap();
        let lam = |t: &DVector<f64>| SymmetricEigen::new(arch.dense_hessian(t, &data, TrainLoss::Mse).unwrap()).eigenvalues.max();
        let g = arch.grad(&model.params, &data, TrainLoss::Mse).unwrap();
        let h = 1e-5;
        let dl = DVector::from_fn(4, |i, _| {
            let mut p = model.params.clone();
            p[i] += h;
            let up = lam(&p);
            p[i] -= 2.0 * h;
            (up - lam(&p)) / (2.0 * h)
        });
        let want = -g.dot(&dl);
        assert!((s.alpha - want).abs() <= 0.05 * want.abs(), "{} vs {want}", s.alpha);
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("toytrain-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        std::fs::write(&path, "a,b,label\n0.5,1.0,0\n-1.0,2.0,2\n").unwrap();
        let d = Dataset::from_csv(&path).unwrap();
        assert_eq!(d.inputs, DMatrix::from_row_slice(2, 2, &[0.5, 1.0, -1.0, 2.0]));
        assert_eq!(d.targets, DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        std::fs::write(&path, "a,label\n0.5,0.5\n").unwrap();
        assert!(Dataset::from_csv(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn gamma_u_uses_next_diagnosed_epoch() {
        let mk = |u: Option<f64>| EpochRecord {
            epoch: 0,
            eta: 0.1,
            loss: 0.0,
            lambda_max: None,
            lambda_neg: None,
            delta_t: None,
            u_proxy: u,
            gamma_u_abs: None,
            xi_sign: None,
            theta_osc: None,
            subspace_score_vs_baseline: None,
            alpha_selfstab: None,
            alpha_reliable: None,
        };
        let mut recs = vec![mk(Some(2.0)), mk(None), mk(Some(-8.0)), mk(Some(4.0))];
        fill_gamma_u(&mut recs);
        assert_eq!(recs[0].gamma_u_abs, Some(4.0));
        assert_eq!(recs[0].xi_sign, Some(1));
        assert_eq!(recs[2].gamma_u_abs, Some(2.0));
        assert_eq!(recs[2].xi_sign, Some(-1));
        assert_eq!(recs[3].gamma_u_abs, None);
    }
}
