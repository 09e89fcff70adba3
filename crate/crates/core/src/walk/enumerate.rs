use serde::Serialize;

use super::AlphaFn;
use crate::error::{Error, Result};

/// Largest horizon accepted by exhaustive enumeration (`2^24` atoms).
pub const MAX_ENUMERATION_T: usize = 24;

/// Breadth-first enumeration of every sign string from a point mass.
///
/// After `t` advances `values()[s]` is `T_s(x₀)` where bit `i` of `s` is the sign of step `i`.
#[derive(Debug, Clone)]
pub struct Enumeration {
    x0: f64,
    t: usize,
    values: Vec<f64>,
}

impl Enumeration {
    pub fn new(x0: f64) -> Self {
        Self {
            x0,
            t: 0,
            values: vec![x0],
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn advance(&mut self, alpha: &AlphaFn) -> Result<()> {
        if self.t + 1 > MAX_ENUMERATION_T {
            return Err(Error::HorizonTooLarge {
                t: self.t + 1,
                max: MAX_ENUMERATION_T,
            });
        }
        let mut next = vec![0.0; self.values.len() * 2];
        let (minus, plus) = next.split_at_mut(self.values.len());
        for (i, &x) in self.values.iter().enumerate() {
            let a = alpha.checked(x)?;
            minus[i] = x - a;
            plus[i] = x + a;
        }
        self.values = next;
        self.t += 1;
        Ok(())
    }

    /// Number of atoms `≤ u`.
    pub fn count_le(&self, u: f64) -> u64 {
        self.values.iter().filter(|&&x| x <= u).count() as u64
    }

    /// `S_t` of sign string `s`.
    pub fn sign_sum(&self, s: usize) -> i64 {
        2 * s.count_ones() as i64 - self.t as i64
    }

    pub fn to_dist(&self) -> ExactDist {
        ExactDist::uniform(self.values.clone())
    }
}

/// Sign string of mask `s` over `t` steps, first step first.
pub fn format_signs(s: usize, t: usize) -> String {
    (0..t).map(|i| if s >> i & 1 == 1 { '+' } else { '-' }).collect()
}

/// Exact law of `X_t` from a point mass: `2^t` atoms of weight `2^{−t}`.
pub fn enumerate_paths(x0: f64, alpha: &AlphaFn, t: usize) -> Result<ExactDist> {
    if t > MAX_ENUMERATION_T {
        return Err(Error::HorizonTooLarge {
            t,
            max: MAX_ENUMERATION_T,
        });
    }
    let mut e = Enumeration::new(x0);
    for _ in 0..t {
        e.advance(alpha)?;
    }
    Ok(e.to_dist())
}

/// Finite weighted distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactDist {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ExactDist {
    pub fn uniform(values: Vec<f64>) -> Self {
        let w = 1.0 / values.len() as f64;
        let weights = vec![w; values.len()];
        Self { values, weights }
    }

    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != weights.len() || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidInput("distribution needs matching nonnegative weights".into()));
        }
        Ok(Self { values, weights })
    }

    /// Mixture `Σ wᵢ Dᵢ`.
    pub fn mixture(parts: &[(f64, ExactDist)]) -> Self {
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for (w, d) in parts {
            values.extend_from_slice(&d.values);
            weights.extend(d.weights.iter().map(|x| x * w));
        }
        Self { values, weights }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn cdf(&self, u: f64) -> f64 {
        self.values.iter().zip(&self.weights).filter(|(x, _)| **x <= u).map(|(_, w)| w).sum()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() / self.total_weight()
    }

    /// Sorted `(value, weight)` pairs with equal values merged.
    pub fn sorted_atoms(&self) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> = self.values.iter().copied().zip(self.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += w,
                _ => merged.push((x, w)),
            }
        }
        merged
    }

    /// `inf{u : F(u) ≥ q}`.
    pub fn quantile(&self, q: f64) -> f64 {
        let atoms = self.sorted_atoms();
        let target = q * self.total_weight();
        let mut acc = 0.0;
        for &(x, w) in &atoms {
            acc += w;
            if acc >= target * (1.0 - 1e-12) {
                return x;
            }
        }
        atoms.last().map(|a| a.0).unwrap_or(f64::NAN)
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::two_step_branches;

    #[test]
    fn small_horizons() {
        let a = AlphaFn::sigmoid(0.01);
        let d1 = enumerate_paths(0.0, &a, 1).unwrap();
        assert_eq!(d1.values, vec![-0.5, 0.5]);
        assert_eq!(d1.weights, vec![0.5, 0.5]);
        let d2 = enumerate_paths(0.3, &a, 2).unwrap();
        let b = two_step_branches(0.3, &a).unwrap();
        // masks: 0 = --, 1 = +-, 2 = -+, 3 = ++
        assert_eq!(d2.values, vec![b[3], b[1], b[2], b[0]]);
        let d = enumerate_paths(0.0, &a, 10).unwrap();
        assert_eq!(d.values.len(), 1024);
        assert!((d.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_encoding() {
        assert_eq!(format_signs(0b01, 2), "+-");
        let mut e = Enumeration::new(0.0);
        e.advance(&AlphaFn::affine(1.0, 0.0)).unwrap();
        e.advance(&AlphaFn::affine(1.0, 0.0)).unwrap();
        assert_eq!(e.sign_sum(0b11), 2);
        assert_eq!(e.sign_sum(0b10), 0);
        assert_eq!(e.values()[0b10], 0.0);
    }

    #[test]
    fn horizon_limit() {
        assert!(matches!(
            enumerate_paths(0.0, &AlphaFn::sigmoid(0.01), 25),
            Err(Error::HorizonTooLarge { t: 25, max: 24 })
        ));
    }

    #[test]
    fn median_uses_inf_convention() {
        let d = ExactDist::uniform(vec![1.0, -1.0]);
        assert_eq!(d.median(), -1.0);
        assert_eq!(ExactDist::uniform(vec![2.0]).median(), 2.0);
    }

    #[test]
    fn enumeration_is_a_martingale() {
        let a = AlphaFn::sigmoid(0.3);
        let mut e = Enumeration::new(0.7);
        for _ in 0..12 {
            let prev: Vec<f64> = e.values().to_vec();
            e.advance(&a).unwrap();
            let n = prev.len();
            for (i, x) in prev.iter().enumerate() {
                let mean = 0.5 * (e.values()[i] + e.values()[i + n]);
                assert!((mean - x).abs() <= 1e-14 * (1.0 + x.abs()));
            }
        }
    }
}
