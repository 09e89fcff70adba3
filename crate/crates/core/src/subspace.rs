//! Principal angles between subspaces and the cosine-Grassmannian score.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Column-orthonormal `p × m` array.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis {
    columns: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Wraps `columns` after checking `‖VᵀV − I‖_max ≤ 1e-10` and `p ≥ m ≥ 1`.
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        let (p, m) = columns.shape();
        if m == 0 || p < m {
            return Err(Error::InvalidInput(format!("basis shape {p}x{m} needs p >= m >= 1")));
        }
        let gram = columns.transpose() * &columns;
        let defect = (gram - DMatrix::<f64>::identity(m, m)).amax();
        if defect > 1e-10 {
            return Err(Error::InvalidInput(format!("columns not orthonormal (defect {defect:.3e})")));
        }
        Ok(Self { columns })
    }

    /// Orthonormalises arbitrary full-rank columns with a thin QR.
    pub fn orthonormalize(columns: DMatrix<f64>) -> Result<Self> {
        let (p, m) = columns.shape();
        if m == 0 || p < m {
            return Err(Error::InvalidInput(format!("basis shape {p}x{m} needs p >= m >= 1")));
        }
        let q = columns.qr().q();
        Self::new(q.columns(0, m).into_owned())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }
}

/// Principal angles in `[0, π/2]`, ascending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrincipalAngles {
    pub angles: Vec<f64>,
}

/// Singular values of `m` (descending) by one-sided Jacobi rotations.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut a = if m.nrows() >= m.ncols() { m.clone() } else { m.transpose() };
    let n = a.ncols();
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..a.nrows() {
                    let ai = a[(k, i)];
                    let aj = a[(k, j)];
                    a[(k, i)] = c * ai - s * aj;
                    a[(k, j)] = s * ai + c * aj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// `φᵢ = arccos(clamp(σᵢ, 0, 1))` from the singular values of `AᵀB`.
pub fn principal_angles(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<PrincipalAngles> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: a.ambient_dim(),
            got: b.ambient_dim(),
        });
    }
    let cross = a.matrix().transpose() * b.matrix();
    let m_min = a.rank().min(b.rank());
    let angles = singular_values(&cross)
        .into_iter()
        .take(m_min)
        .map(|s| s.clamp(0.0, 1.0).acos())
        .collect();
    Ok(PrincipalAngles { angles })
}

/// `(Σ φᵢ²)^{1/2}`.
pub fn grassmann_distance(angles: &PrincipalAngles) -> f64 {
    angles.angles.iter().map(|p| p * p).sum::<f64>().sqrt()
}

/// `S = 1 − cos(h/√m_min)`.
pub fn misalignment_from_angles(angles: &PrincipalAngles) -> f64 {
    let m = angles.angles.len().max(1) as f64;
    1.0 - (grassmann_distance(angles) / m.sqrt()).cos()
}

/// Cosine-Grassmannian misalignment score in `[0, 1]`.
pub fn misalignment_score(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<f64> {
    Ok(misalignment_from_angles(&principal_angles(a, b)?))
}

/// `1 − S`.
pub fn similarity_score(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<f64> {
    Ok(1.0 - misalignment_score(a, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn line(v: &[f64]) -> OrthonormalBasis {
        let col = DMatrix::from_column_slice(v.len(), 1, v);
        let n = col.norm();
        OrthonormalBasis::new(col / n).unwrap()
    }

    fn random_basis(p: usize, m: usize, seed: u64) -> OrthonormalBasis {
        let mut rng = rng_from_seed(seed);
        OrthonormalBasis::orthonormalize(DMatrix::from_fn(p, m, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    #[test]
    fn angle_examples() {
        let b = random_basis(6, 3, 1);
        let same = principal_angles(&b, &b).unwrap();
        assert!(same.angles.iter().all(|&a| a < 1e-7));
        let orth = principal_angles(&line(&[1.0, 0.0]), &line(&[0.0, 1.0])).unwrap();
        assert_eq!(orth.angles, vec![FRAC_PI_2]);
        let diag = principal_angles(&line(&[1.0, 0.0]), &line(&[1.0, 1.0])).unwrap();
        assert!((diag.angles[0] - FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(grassmann_distance(&PrincipalAngles { angles: vec![0.0, 0.0] }), 0.0);
        assert_eq!(grassmann_distance(&PrincipalAngles { angles: vec![FRAC_PI_4] }), FRAC_PI_4);
        let d = grassmann_distance(&PrincipalAngles {
            angles: vec![FRAC_PI_4, FRAC_PI_4],
        });
        assert!((d - std::f64::consts::PI / (2.0 * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn score_examples() {
        let e1 = line(&[1.0, 0.0]);
        assert_eq!(misalignment_score(&e1, &e1).unwrap(), 0.0);
        assert!((misalignment_score(&e1, &line(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        let s = misalignment_score(&e1, &line(&[1.0, 1.0])).unwrap();
        assert!((s - (1.0 - FRAC_PI_4.cos())).abs() < 1e-12);
        assert!((s - 0.29289).abs() < 1e-5);
        assert!((similarity_score(&e1, &line(&[1.0, 1.0])).unwrap() - FRAC_PI_4.cos()).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_score_is_one_minus_abs_cosine() {
        let mut rng = rng_from_seed(3);
        for _ in 0..50 {
            let a: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let (la, lb) = (line(&a), line(&b));
            let cos = la.matrix().column(0).dot(&lb.matrix().column(0)).abs();
            assert!((misalignment_score(&la, &lb).unwrap() - (1.0 - cos)).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_ambient_dimension_is_rejected() {
        assert!(principal_angles(&line(&[1.0, 0.0]), &line(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn unequal_ranks_use_m_min() {
        let a = random_basis(7, 2, 5);
        let b = random_basis(7, 4, 6);
        let angles = principal_angles(&a, &b).unwrap();
        assert_eq!(angles.angles.len(), 2);
        assert!(angles.angles.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn jacobi_singular_values_match_nalgebra() {
        let mut rng = rng_from_seed(9);
        for _ in 0..20 {
            let m = DMatrix::from_fn(4, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let ours = singular_values(&m);
            let mut theirs: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
            theirs.sort_by(|x, y| y.total_cmp(x));
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
