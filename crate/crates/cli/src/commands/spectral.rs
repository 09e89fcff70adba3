use std::path::{Path, PathBuf};

use clap::Args;
use instabilitylab::rmt::{sample_wigner, NoiseScaling};
use instabilitylab::spectral::spectrum_estimate;
use instabilitylab::{derive_seed, rng_from_seed, DMatrix, DVector, DenseOracle, LanczosOptions};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Command;
use crate::config::{fmt_f64, resolve_input, usage, write_csv, CliError, CliResult, JobReport};

pub const HELP: &str = "\
Output ritz.csv columns:
  ritz_rank   0-based rank, descending by value
  ritz_value  Ritz value of the order-m tridiagonal
  residual    ||A y - theta y|| of the Ritz pair";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SpectralParams {
    /// Symmetric matrix as headerless numeric CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,
    /// Built-in operator: wigner, clustered or diagonal.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Dimension of the built-in operator.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Lanczos order m.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_min: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Source {
    Matrix { path: PathBuf },
    Builtin { name: String, dim: usize },
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SpectralConfig {
    pub source: Source,
    pub order: Option<usize>,
    pub seed: u64,
    pub gamma_max: f64,
    pub gamma_min: f64,
}

pub struct Spectral;

fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| CliError::Failure(format!("{}: non-numeric entry `{s}`", path.display()))))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Failure(format!("{}: matrix must be square and nonempty", path.display())));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (&m - m.transpose()).amax() > 1e-12 * scale {
        return Err(CliError::Failure(format!("{}: matrix is not symmetric", path.display())));
    }
    Ok(m)
}

fn builtin(name: &str, n: usize, seed: u64) -> DMatrix<f64> {
    match name {
        "wigner" => sample_wigner(n, 1.0, NoiseScaling::PerDimension, seed),
        "clustered" => {
            let mut rng = rng_from_seed(derive_seed(seed, 1));
            let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = g.qr().q();
            let d = DVector::from_fn(n, |i, _| [-5.0, 1.0, 7.0][i % 3] + 1e-9 * (i / 3) as f64);
            let a = &q * DMatrix::from_diagonal(&d) * q.transpose();
            (&a + a.transpose()) * 0.5
        }
        _ => DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| (i + 1) as f64 / n as f64)),
    }
}

impl Command for Spectral {
    const NAME: &'static str = "spectral";
    type Params = SpectralParams;
    type Resolved = SpectralConfig;

    fn resolve(p: SpectralParams) -> CliResult<SpectralConfig> {
        let source = match (p.matrix, p.builtin) {
            (Some(_), Some(_)) => return usage("`matrix` and `builtin` are mutually exclusive"),
            (Some(path), None) => Source::Matrix {
                path: resolve_input(&path, "matrix")?,
            },
            (None, name) => {
                let name = name.unwrap_or_else(|| "wigner".into());
                if !["wigner", "clustered", "diagonal"].contains(&name.as_str()) {
                    return usage(format!("`builtin` must be wigner, clustered or diagonal, got `{name}`"));
                }
                let dim = p.dim.unwrap_or(100);
                if dim == 0 {
                    return usage("`dim` must be positive");
                }
                Source::Builtin { name, dim }
            }
        };
        if p.order == Some(0) {
            return usage("`order` must be positive");
        }
        let defaults = LanczosOptions::default();
        Ok(SpectralConfig {
            source,
            order: p.order,
            seed: p.seed.unwrap_or(0),
            gamma_max: p.gamma_max.unwrap_or(defaults.gamma_max),
            gamma_min: p.gamma_min.unwrap_or(defaults.gamma_min),
        })
    }

    fn seed(cfg: &SpectralConfig) -> u64 {
        cfg.seed
    }

    fn run(cfg: &SpectralConfig, out: &Path) -> CliResult<JobReport> {
        let matrix = match &cfg.source {
            Source::Matrix { path } => read_matrix(path)?,
            Source::Builtin { name, dim } => builtin(name, *dim, cfg.seed),
        };
        let n = matrix.nrows();
        let order = cfg.order.unwrap_or(n.min(50)).min(n);
        let opts = LanczosOptions {
            seed: cfg.seed,
            gamma_max: cfg.gamma_max,
            gamma_min: cfg.gamma_min,
            ..LanczosOptions::default()
        };
        let est = spectrum_estimate(&DenseOracle::new(matrix)?, order, &opts, true)?;
        let residuals = est.residuals.clone().unwrap_or_default();
        let rows: Vec<Vec<String>> = est
            .ritz_values
            .iter()
            .zip(&residuals)
            .enumerate()
            .map(|(k, (v, r))| vec![k.to_string(), fmt_f64(*v), fmt_f64(*r)])
            .collect();
        write_csv(&out.join("ritz.csv"), &["ritz_rank", "ritz_value", "residual"], &rows)?;
        Ok(JobReport::ok(vec![
            ("order".into(), order.to_string()),
            ("lambda_max".into(), fmt_f64(est.ritz_values[0])),
            ("lambda_min".into(), fmt_f64(*est.ritz_values.last().expect("nonempty"))),
            ("max_residual".into(), fmt_f64(residuals.iter().fold(0.0, |m: f64, r| m.max(*r)))),
        ]))
    }
}
