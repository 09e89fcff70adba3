//! Order statistics, kernel density estimates and confidence bands.

use serde::Serialize;

use super::ExactDist;

/// Summary of a one-dimensional distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistStats {
    pub median: f64,
    pub mode: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub mean: f64,
    pub edge_spread: f64,
    pub bandwidth: f64,
}

/// `inf{u : F̂(u) ≥ q}` on sorted equal-weight samples.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

/// `sup_x |F̂ − F| ≤ ε` holds with probability `confidence`: `ε = √(ln(2/(1−conf))/(2n))`.
pub fn dkw_epsilon(n: usize, confidence: f64) -> f64 {
    ((2.0 / (1.0 - confidence)).ln() / (2.0 * n as f64)).sqrt()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// `1.06 σ̂ n^{−1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let (_, sd) = mean_sd(samples);
    1.06 * sd * (samples.len() as f64).powf(-0.2)
}

/// Binned Gaussian KDE on a regular grid of spacing `h/10`: returns `(grid, density)`.
pub fn kde_grid(samples: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mut dx = h / 10.0;
    let span = hi - lo + 8.0 * h;
    if span / dx > 200_000.0 {
        dx = span / 200_000.0;
    }
    let start = lo - 4.0 * h;
    let m = (span / dx).ceil() as usize + 1;
    let mut counts = vec![0.0; m];
    for &x in samples {
        let pos = (x - start) / dx;
        let k = (pos.floor() as usize).min(m - 2);
        let frac = pos - k as f64;
        counts[k] += 1.0 - frac;
        counts[k + 1] += frac;
    }
    let taps = ((5.0 * h / dx).ceil() as usize).max(1);
    let kernel: Vec<f64> = (0..=taps)
        .map(|j| {
            let u = j as f64 * dx / h;
            (-0.5 * u * u).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    let n = samples.len() as f64;
    let mut dens = vec![0.0; m];
    for (i, d) in dens.iter_mut().enumerate() {
        let lo_j = i.saturating_sub(taps);
        let hi_j = (i + taps).min(m - 1);
        let mut s = 0.0;
        for (j, c) in counts.iter().enumerate().take(hi_j + 1).skip(lo_j) {
            if *c != 0.0 {
                s += c * kernel[i.abs_diff(j)];
            }
        }
        *d = s / n;
    }
    let grid = (0..m).map(|i| start + i as f64 * dx).collect();
    (grid, dens)
}

/// Leftmost maximiser of the KDE.
pub fn kde_mode(samples: &[f64], h: f64) -> f64 {
    let (grid, dens) = kde_grid(samples, h);
    let mut best = 0;
    for (i, &d) in dens.iter().enumerate() {
        if d > dens[best] {
            best = i;
        }
    }
    grid[best]
}

/// Median, KDE mode, 5/50/95% quantiles and mean of equal-weight samples.
///
/// `bandwidth` defaults to Silverman's rule; zero spread gives mode = median.
pub fn dist_stats(samples: &[f64], bandwidth: Option<f64>) -> DistStats {
    assert!(!samples.is_empty(), "dist_stats needs samples");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mean, _) = mean_sd(samples);
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    let median = quantile_sorted(&sorted, 0.5);
    let mode = if h > 0.0 && sorted[0] < sorted[sorted.len() - 1] {
        kde_mode(samples, h)
    } else {
        median
    };
    let (q05, q95) = (quantile_sorted(&sorted, 0.05), quantile_sorted(&sorted, 0.95));
    DistStats {
        median,
        mode,
        q05,
        q50: median,
        q95,
        mean,
        edge_spread: q95 - q05,
        bandwidth: h,
    }
}

/// As [`dist_stats`] for a weighted distribution; the mode is the leftmost atom
/// of the heaviest histogram bin of width `bandwidth` anchored at the smallest atom.
pub fn dist_stats_exact(dist: &ExactDist, bandwidth: Option<f64>) -> DistStats {
    let atoms = dist.sorted_atoms();
    let total = dist.total_weight();
    let mean = dist.mean();
    let var = atoms.iter().map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / total;
    let h = bandwidth.unwrap_or(1.06 * var.sqrt() * (atoms.len() as f64).powf(-0.2));
    let mode = if h > 0.0 {
        let x0 = atoms[0].0;
        let mut best = (f64::NEG_INFINITY, atoms[0].0);
        let mut i = 0;
        while i < atoms.len() {
            let bin = ((atoms[i].0 - x0) / h).floor();
            let first = atoms[i].0;
            let mut mass = 0.0;
            while i < atoms.len() && ((atoms[i].0 - x0) / h).floor() == bin {
                mass += atoms[i].1;
                i += 1;
            }
            if mass > best.0 * (1.0 + 1e-12) {
                best = (mass, first);
            }
        }
        best.1
    } else {
        atoms.iter().fold(atoms[0], |b, &a| if a.1 > b.1 { a } else { b }).0
    };
    let (q05, median, q95) = (dist.quantile(0.05), dist.median(), dist.quantile(0.95));
    DistStats {
        median,
        mode,
        q05,
        q50: median,
        q95,
        mean,
        edge_spread: q95 - q05,
        bandwidth: h,
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_sd(&rx);
    let (my, _) = mean_sd(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn two_atom_convention() {
        let d = ExactDist::uniform(vec![-1.0, 1.0]);
        let s = dist_stats_exact(&d, Some(0.5));
        assert_eq!(s.median, -1.0);
        assert_eq!(s.mode, -1.0);
        let s = dist_stats(&[-1.0, 1.0], None);
        assert_eq!(s.median, -1.0);
    }

    #[test]
    fn point_mass_stats() {
        let s = dist_stats(&[2.5; 10], None);
        assert_eq!((s.median, s.mode, s.edge_spread), (2.5, 2.5, 0.0));
        let s = dist_stats_exact(&ExactDist::uniform(vec![2.5]), None);
        assert_eq!((s.median, s.mode, s.edge_spread), (2.5, 2.5, 0.0));
    }

    #[test]
    fn standard_normal_sample() {
        let mut rng = rng_from_seed(5);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let s = dist_stats(&xs, None);
        assert!(s.median.abs() < 0.02);
        assert!(s.mode.abs() < 0.1);
        assert!((s.q95 - 1.6449).abs() < 0.03 && (s.q05 + 1.6449).abs() < 0.03);
        let (grid, dens) = kde_grid(&xs, s.bandwidth);
        let dx = grid[1] - grid[0];
        assert!((dens.iter().sum::<f64>() * dx - 1.0).abs() < 1e-3);
    }

    #[test]
    fn quantile_inf_convention() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.25), 1.0);
        assert_eq!(quantile_sorted(&v, 0.26), 2.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn dkw_value() {
        assert!((dkw_epsilon(100_000, 0.99) - (200f64.ln() / 200_000.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 2.0]) - 0.894427191).abs() < 1e-8);
    }
}
