use std::path::{Path, PathBuf};

use clap::Args;
use instabilitylab::subspace::{grassmann_distance, misalignment_from_angles, principal_angles};
use instabilitylab::{derive_seed, rng_from_seed, DMatrix, OrthonormalBasis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Command;
use crate::config::{fmt_f64, resolve_input, usage, write_csv, CliError, CliResult, JobReport};

pub const HELP: &str = "\
Inputs are headerless numeric CSVs whose columns span each subspace (rows are
ambient coordinates). Without inputs, two random subspaces are drawn: A, and B
spanned by A plus `noise` times a Gaussian perturbation.

Output subspace.csv columns (one row):
  rank_a, rank_b        subspace dimensions after orthonormalisation
  angles                principal angles in radians, ascending, ';'-separated
  grassmann_distance    Euclidean norm of the angle vector
  misalignment_score    1 - cos(distance / sqrt(min rank)), 0 for equal subspaces
  similarity_score      1 - misalignment_score";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SubspaceParams {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis_a: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis_b: Option<PathBuf>,
    /// Ambient dimension for random subspaces.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Rank of the random subspaces.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Perturbation size for the second random subspace.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Bases {
    Files { basis_a: PathBuf, basis_b: PathBuf },
    Random { dim: usize, rank: usize, noise: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SubspaceConfig {
    pub bases: Bases,
    pub seed: u64,
}

pub struct Subspace;

fn read_columns(path: &Path) -> CliResult<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        rows.push(
            rec?.iter()
                .map(|s| s.parse::<f64>().map_err(|_| CliError::Failure(format!("{}: non-numeric entry `{s}`", path.display()))))
                .collect::<CliResult<_>>()?,
        );
    }
    let k = rows.first().map_or(0, |r| r.len());
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(CliError::Failure(format!("{}: ragged or empty basis", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]))
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

impl Command for Subspace {
    const NAME: &'static str = "subspace";
    type Params = SubspaceParams;
    type Resolved = SubspaceConfig;

    fn resolve(p: SubspaceParams) -> CliResult<SubspaceConfig> {
        let bases = match (p.basis_a, p.basis_b) {
            (Some(a), Some(b)) => Bases::Files {
                basis_a: resolve_input(&a, "basis-a")?,
                basis_b: resolve_input(&b, "basis-b")?,
            },
            (None, None) => {
                let dim = p.dim.unwrap_or(20);
                let rank = p.rank.unwrap_or(3);
                if rank == 0 || rank > dim {
                    return usage(format!("`rank` must be in 1..=dim, got {rank} with dim {dim}"));
                }
                Bases::Random {
                    dim,
                    rank,
                    noise: p.noise.unwrap_or(0.1),
                }
            }
            _ => return usage("`basis-a` and `basis-b` must be given together"),
        };
        Ok(SubspaceConfig {
            bases,
            seed: p.seed.unwrap_or(0),
        })
    }

    fn seed(cfg: &SubspaceConfig) -> u64 {
        cfg.seed
    }

    fn run(cfg: &SubspaceConfig, out: &Path) -> CliResult<JobReport> {
        let (a, b) = match &cfg.bases {
            Bases::Files { basis_a, basis_b } => (read_columns(basis_a)?, read_columns(basis_b)?),
            Bases::Random { dim, rank, noise } => {
                let a = gaussian(*dim, *rank, derive_seed(cfg.seed, 0));
                let b = &a + gaussian(*dim, *rank, derive_seed(cfg.seed, 1)) * *noise;
                (a, b)
            }
        };
        let (a, b) = (OrthonormalBasis::orthonormalize(a)?, OrthonormalBasis::orthonormalize(b)?);
        let angles = principal_angles(&a, &b)?;
        let dist = grassmann_distance(&angles);
        let score = misalignment_from_angles(&angles);
        let joined = angles.angles.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";");
        let row = vec![a.rank().to_string(), b.rank().to_string(), joined, fmt_f64(dist), fmt_f64(score), fmt_f64(1.0 - score)];
        let header = ["rank_a", "rank_b", "angles", "grassmann_distance", "misalignment_score", "similarity_score"];
        println!("{}\n{}", header.join(","), row.join(","));
        write_csv(&out.join("subspace.csv"), &header, &[row])?;
        Ok(JobReport::ok(vec![
            ("grassmann_distance".into(), fmt_f64(dist)),
            ("misalignment_score".into(), fmt_f64(score)),
        ]))
    }
}
