//! Numerical certificates for the contraction results of the walk.
//!
//! Enumeration-based checks are exact up to floating-point rounding of the
//! iterates; Monte Carlo checks use 99% DKW or normal confidence bands.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use super::stats::{dist_stats, dkw_epsilon, kde_mode, quantile_sorted, DistStats};
use super::{
    format_signs, reachable_range, simulate_ensemble, two_step_branches, AlphaFn, AlphaGrid, Enumeration, InitDist,
    WalkConfig,
};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Grid resolution for verifying conditions on `α`.
pub const GRID_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    PreconditionViolated,
}

impl CheckStatus {
    fn from(precondition: bool, holds: bool) -> Self {
        match (precondition, holds) {
            (false, _) => Self::PreconditionViolated,
            (true, true) => Self::Pass,
            (true, false) => Self::Fail,
        }
    }
}

fn grid_for(alpha: &AlphaFn, lo: f64, hi: f64, t: usize) -> Result<AlphaGrid> {
    let (l, h) = reachable_range(alpha, lo, hi, t)?;
    Ok(alpha.verify_on_grid(l, h, GRID_POINTS))
}

#[derive(Debug, Clone, Serialize)]
pub struct PmcLevel {
    pub t: usize,
    pub count_le: u64,
    pub total: u64,
    pub f_t: f64,
}

/// Point-mass contraction: `F_t(u) ≥ ½` for every `t`, strictly at even `t`.
#[derive(Debug, Clone, Serialize)]
pub struct PmcReport {
    pub u: f64,
    pub t: usize,
    pub grid: AlphaGrid,
    pub levels: Vec<PmcLevel>,
    /// `min (F_t(u) − ½)` over even `t ≥ 2`.
    pub min_even_gap: f64,
    pub status: CheckStatus,
    pub message: String,
}

pub fn check_pmc(alpha: &AlphaFn, u: f64, t: usize) -> Result<PmcReport> {
    let grid = grid_for(alpha, u, u, t)?;
    let precondition = grid.positive && grid.strictly_increasing;
    let mut e = Enumeration::new(u);
    let mut levels = Vec::with_capacity(t);
    let mut holds = true;
    let mut min_even_gap = f64::INFINITY;
    let mut message = String::new();
    for level in 1..=t {
        e.advance(alpha)?;
        let total = 1u64 << level;
        let count_le = e.count_le(u);
        if 2 * count_le < total || (level % 2 == 0 && 2 * count_le == total) {
            if holds {
                message = format!("F_{level}(u) = {count_le}/{total}");
            }
            holds = false;
        }
        if level % 2 == 0 {
            min_even_gap = min_even_gap.min(count_le as f64 / total as f64 - 0.5);
        }
        levels.push(PmcLevel {
            t: level,
            count_le,
            total,
            f_t: count_le as f64 / total as f64,
        });
    }
    if !precondition {
        message = "alpha is not strictly increasing and positive on the visited range".into();
    }
    Ok(PmcReport {
        u,
        t,
        grid,
        levels,
        min_even_gap,
        status: CheckStatus::from(precondition, holds),
        message,
    })
}

/// Every zero-sum sign string ends strictly below its start.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroSumReport {
    pub x0: f64,
    pub t: usize,
    pub strings_checked: u64,
    /// `max (X_t − x₀)` over zero-sum strings.
    pub max_excess: f64,
    pub offending: Option<String>,
    pub status: CheckStatus,
}

pub fn check_zero_sum(alpha: &AlphaFn, x0: f64, t: usize) -> Result<ZeroSumReport> {
    let grid = grid_for(alpha, x0, x0, t)?;
    let precondition = grid.positive && grid.strictly_increasing;
    let mut e = Enumeration::new(x0);
    let mut strings_checked = 0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut offending = None;
    for level in 1..=t {
        e.advance(alpha)?;
        if level % 2 != 0 {
            continue;
        }
        for (s, &x) in e.values().iter().enumerate() {
            if e.sign_sum(s) == 0 {
                strings_checked += 1;
                max_excess = max_excess.max(x - x0);
                if x >= x0 && offending.is_none() {
                    offending = Some(format_signs(s, level));
                }
            }
        }
    }
    Ok(ZeroSumReport {
        x0,
        t,
        strings_checked,
        max_excess,
        status: CheckStatus::from(precondition, offending.is_none()),
        offending,
    })
}

/// Adjacent cancellations `T₊₋(x) < x` and `T₋₊(x) < x` on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct AdjacentReport {
    pub points: usize,
    pub max_plus_minus: f64,
    pub max_minus_plus: f64,
    pub offending_x: Option<f64>,
    pub status: CheckStatus,
}

pub fn check_adjacent(alpha: &AlphaFn, lo: f64, hi: f64, points: usize) -> Result<AdjacentReport> {
    let grid = alpha.verify_on_grid(lo, hi, points);
    let mut r = AdjacentReport {
        points,
        max_plus_minus: f64::NEG_INFINITY,
        max_minus_plus: f64::NEG_INFINITY,
        offending_x: None,
        status: CheckStatus::Pass,
    };
    for i in 0..points.max(2) {
        let x = lo + (hi - lo) * i as f64 / (points.max(2) - 1) as f64;
        let b = two_step_branches(x, alpha)?;
        r.max_plus_minus = r.max_plus_minus.max(b[1] - x);
        r.max_minus_plus = r.max_minus_plus.max(b[2] - x);
        if (b[1] >= x || b[2] >= x) && r.offending_x.is_none() {
            r.offending_x = Some(x);
        }
    }
    r.status = CheckStatus::from(grid.positive && grid.strictly_increasing, r.offending_x.is_none());
    Ok(r)
}

/// Two-step quantitative contraction `F₂(u − ε) ≥ ¾` for `ε < min(δ₁, δ₂, δ₃)`.
#[derive(Debug, Clone, Serialize)]
pub struct TwoStepReport {
    pub u: f64,
    /// `(T₊₊, T₊₋, T₋₊, T₋₋)`.
    pub branches: [f64; 4],
    pub deltas: [f64; 3],
    pub eps_star: f64,
    /// `(ε, F₂(u − ε))` at a few `ε ∈ (0, ε*)`.
    pub probes: Vec<(f64, f64)>,
    pub status: CheckStatus,
}

pub fn check_two_step(alpha: &AlphaFn, u: f64) -> Result<TwoStepReport> {
    let a = alpha.checked(u)?;
    let d1 = alpha.checked(u + a)? - a;
    let d2 = a - alpha.checked(u - a)?;
    let d3 = a + alpha.checked(u - a)?;
    let eps_star = d1.min(d2).min(d3);
    let branches = two_step_branches(u, alpha)?;
    let probes: Vec<(f64, f64)> = [1e-3, 0.5, 0.999]
        .iter()
        .map(|f| {
            let eps = f * eps_star;
            let count = branches.iter().filter(|&&x| x <= u - eps).count();
            (eps, count as f64 / 4.0)
        })
        .collect();
    let grid = grid_for(alpha, u, u, 2)?;
    let holds = eps_star > 0.0 && probes.iter().all(|p| p.1 >= 0.75);
    Ok(TwoStepReport {
        u,
        branches,
        deltas: [d1, d2, d3],
        eps_star,
        probes,
        status: CheckStatus::from(grid.positive && grid.strictly_increasing, holds),
    })
}

/// Uniform gap under claimed global bounds `α ≥ c₀`, `α′ ≥ c₁`.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub u: f64,
    pub t: usize,
    pub c0: f64,
    pub c1: f64,
    pub grid: AlphaGrid,
    pub zero_sum_strings: u64,
    /// `max (X_t − (u − (t/2)c₀c₁))` over `S_t = 0`; nonpositive when the bound holds.
    pub max_zero_sum_excess: f64,
    /// `max (X_t − (u − (t/2)c₀c₁ − c₀|S_t|))` over `S_t < 0`.
    pub max_negative_excess: f64,
    pub offending: Option<String>,
    /// `F_t(u − ε)` at `ε = (t/4)c₀c₁`.
    pub f_t_shifted: f64,
    pub status: CheckStatus,
    pub message: String,
}

pub fn check_uniform_gap(alpha: &AlphaFn, u: f64, t: usize, c0: f64, c1: f64) -> Result<GapReport> {
    if t % 2 != 0 || t == 0 {
        return Err(Error::InvalidInput(format!("uniform gap needs even t >= 2, got {t}")));
    }
    let grid = grid_for(alpha, u, u, t)?;
    let precondition = grid.positive && grid.alpha_min >= c0 && grid.deriv_min >= c1;
    let mut e = Enumeration::new(u);
    for _ in 0..t {
        e.advance(alpha)?;
    }
    let gap = 0.5 * t as f64 * c0 * c1;
    let mut r = GapReport {
        u,
        t,
        c0,
        c1,
        grid,
        zero_sum_strings: 0,
        max_zero_sum_excess: f64::NEG_INFINITY,
        max_negative_excess: f64::NEG_INFINITY,
        offending: None,
        f_t_shifted: e.count_le(u - 0.5 * gap) as f64 / e.values().len() as f64,
        status: CheckStatus::Pass,
        message: String::new(),
    };
    for (s, &x) in e.values().iter().enumerate() {
        let sum = e.sign_sum(s);
        let excess = if sum == 0 {
            r.zero_sum_strings += 1;
            let ex = x - (u - gap);
            r.max_zero_sum_excess = r.max_zero_sum_excess.max(ex);
            ex
        } else if sum < 0 {
            let ex = x - (u - gap - c0 * sum.unsigned_abs() as f64);
            r.max_negative_excess = r.max_negative_excess.max(ex);
            ex
        } else {
            continue;
        };
        if excess > 0.0 && r.offending.is_none() {
            r.offending = Some(format_signs(s, t));
        }
    }
    let holds = r.offending.is_none() && r.f_t_shifted > 0.5;
    r.status = CheckStatus::from(precondition, holds);
    if !precondition {
        r.message = format!(
            "claimed bounds fail on the visited range: alpha_min = {:.6}, alpha'_min = {:.6}",
            grid.alpha_min, grid.deriv_min
        );
    } else if let Some(s) = &r.offending {
        r.message = format!("bound violated by {s}");
    }
    Ok(r)
}

/// Mass-balance bound `F₂(m₀) ≥ A + ¾B + ¼C` on an atomised initial law.
#[derive(Debug, Clone, Serialize)]
pub struct MassReport {
    pub m0: f64,
    pub a_minus: f64,
    pub a_plus: f64,
    /// `[A, B, C, D]`.
    pub masses: [f64; 4],
    pub f2_m0: f64,
    pub bound: f64,
    pub m2: f64,
    pub status: CheckStatus,
}

pub fn check_mass_conditions(init: &InitDist, alpha: &AlphaFn, atoms: usize) -> Result<MassReport> {
    init.validate()?;
    let mut xs = init.atoms(atoms);
    xs.sort_by(f64::total_cmp);
    let w = 1.0 / xs.len() as f64;
    let m0 = quantile_sorted(&xs, 0.5);
    let a = alpha.checked(m0)?;
    let mut masses = [0.0; 4];
    let mut terminal = Vec::with_capacity(4 * xs.len());
    for &x in &xs {
        let region = if x <= m0 - 2.0 * a {
            0
        } else if x <= m0 {
            1
        } else if x <= m0 + 2.0 * a {
            2
        } else {
            3
        };
        masses[region] += w;
        terminal.extend_from_slice(&two_step_branches(x, alpha)?);
    }
    let f2_m0 = terminal.iter().filter(|&&x| x <= m0).count() as f64 / terminal.len() as f64;
    terminal.sort_by(f64::total_cmp);
    let m2 = quantile_sorted(&terminal, 0.5);
    let bound = masses[0] + 0.75 * masses[1] + 0.25 * masses[2];
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let grid = grid_for(alpha, lo, hi, 2)?;
    let holds = f2_m0 >= bound - 1e-12 && (masses[1] >= masses[2] || m2 < m0);
    Ok(MassReport {
        m0,
        a_minus: a,
        a_plus: a,
        masses,
        f2_m0,
        bound,
        m2,
        status: CheckStatus::from(grid.positive && grid.strictly_increasing, holds),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeRow {
    pub t: usize,
    pub z_t: f64,
    pub bound: f64,
    pub median_t: f64,
    pub f_t_at_z: f64,
    pub decay_ok: bool,
}

/// Upper envelope `Z_t` of per-ancestor medians for a bounded initial law.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub b: f64,
    pub m0: f64,
    pub c: f64,
    pub grid: AlphaGrid,
    /// `⌈(b − m₀)/c⌉`.
    pub n_cross: usize,
    /// Whether `Z_t ≤ m₀ − ((t − 2N)/2)c` for all checked `t ≥ 2N`; `None` when `2N` exceeds the horizon.
    pub crossing_ok: Option<bool>,
    pub rows: Vec<EnvelopeRow>,
    pub status: CheckStatus,
}

pub fn check_envelope_drift(init: &InitDist, alpha: &AlphaFn, t_max: usize, atoms: usize) -> Result<EnvelopeReport> {
    init.validate()?;
    let b = init
        .ess_sup()
        .ok_or_else(|| Error::InvalidInput("envelope check needs a bounded initial law".into()))?;
    let xs = init.atoms(atoms);
    let m0 = init.median();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let grid = grid_for(alpha, lo, b, t_max)?;
    let c = grid.contraction_constant();
    let precondition = grid.positive && grid.strictly_increasing && c > 0.0;
    let n_cross = if c > 0.0 { ((b - m0) / c).ceil().max(0.0) as usize } else { usize::MAX };
    let mut enums: Vec<Enumeration> = xs.iter().map(|&x| Enumeration::new(x)).collect();
    let mut rows = Vec::new();
    let mut prev_z = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut holds = true;
    let mut crossing_ok = None;
    for t in 1..=t_max {
        for e in &mut enums {
            e.advance(alpha)?;
        }
        if t % 2 != 0 {
            continue;
        }
        let mut z_t = f64::NEG_INFINITY;
        let mut all = Vec::with_capacity(enums.len() << t);
        for e in &enums {
            let mut v = e.values().to_vec();
            v.sort_by(f64::total_cmp);
            z_t = z_t.max(quantile_sorted(&v, 0.5));
            all.extend_from_slice(&v);
        }
        let f_t_at_z = all.iter().filter(|&&x| x <= z_t).count() as f64 / all.len() as f64;
        all.sort_by(f64::total_cmp);
        let median_t = quantile_sorted(&all, 0.5);
        let bound = b - 0.5 * t as f64 * c;
        let decay_ok = z_t <= prev_z - c;
        holds &= decay_ok && z_t <= bound && f_t_at_z >= 0.5 && median_t <= z_t;
        if n_cross != usize::MAX && t >= 2 * n_cross {
            let ok = z_t <= m0 - 0.5 * (t - 2 * n_cross) as f64 * c;
            crossing_ok = Some(crossing_ok.unwrap_or(true) && ok);
        }
        rows.push(EnvelopeRow {
            t,
            z_t,
            bound,
            median_t,
            f_t_at_z,
            decay_ok,
        });
        prev_z = z_t;
    }
    holds &= crossing_ok.unwrap_or(true);
    Ok(EnvelopeReport {
        b,
        m0,
        c,
        grid,
        n_cross,
        crossing_ok,
        rows,
        status: CheckStatus::from(precondition, holds),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftRow {
    pub t: usize,
    pub stats: DistStats,
    /// `q_t(½ − ε)` and `q_t(½ + ε)` with the DKW `ε`.
    pub q_lo: f64,
    pub q_hi: f64,
    pub mean_increment: f64,
    pub mean_ci: f64,
    pub mean_ok: bool,
    /// Point estimates satisfy `mode ≤ median`.
    pub mode_le_median_point: bool,
    /// Bootstrap lower confidence bound on `mode − median`.
    pub mode_gap_lower: f64,
    /// `mode ≤ median` is not rejected: `mode_gap_lower ≤ 0`; counts toward the status only at `t = 0` or `t ≥ MODE_MIN_T`.
    pub mode_le_median: bool,
    /// Certified `m_t < m_prev` against the previous checkpoint.
    pub certified_decrease: Option<bool>,
    /// Certified `m_t > m_prev`: evidence against the drift.
    pub certified_increase: Option<bool>,
}

/// Quantified two-step drift `m_{t} ≤ m_{t−2} − p α(m) α̲′(m)`; reported, not asserted.
#[derive(Debug, Clone, Serialize)]
pub struct DriftBoundRow {
    pub t: usize,
    pub m_prev: f64,
    pub m_t: f64,
    pub r: f64,
    pub p: f64,
    pub predicted: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub n_paths: usize,
    pub confidence: f64,
    pub dkw_eps: f64,
    pub grid: AlphaGrid,
    pub unimodal_init: bool,
    pub regularity: bool,
    pub rows: Vec<DriftRow>,
    pub bound_rows: Vec<DriftBoundRow>,
    pub status: CheckStatus,
    pub message: String,
}

/// Monte Carlo median, mode and mean drift at the checkpoints of `cfg`;
/// `confidence` is family-wise over the checkpoints.
pub fn check_median_mode_drift(cfg: &WalkConfig, confidence: f64) -> Result<DriftReport> {
    cfg.validate()?;
    let main = cfg.checkpoint_times();
    let mut all = main.clone();
    all.extend(main.iter().filter(|&&t| t >= 2).map(|t| t - 2));
    let mut run = cfg.clone();
    run.checkpoints = all;
    let ens = simulate_ensemble(&run)?;
    let n = cfg.n_paths;
    // Bonferroni split so `confidence` holds jointly over all checkpoints.
    let per_row = 1.0 - (1.0 - confidence) / main.len() as f64;
    let eps = dkw_epsilon(n, per_row);
    let z = NormalCdf::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + 0.5 * per_row);
    let x0 = ens.at(0).map(|v| v.to_vec());
    let base = ens.at(*main.first().expect("nonempty")).expect("recorded").to_vec();
    let (lo0, hi0) = base.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let grid = grid_for(&cfg.alpha, lo0, hi0, cfg.horizon)?;
    let regularity = grid.positive && grid.lipschitz_below_one();
    let unimodal_init = cfg.init.is_unimodal();

    let mut rows: Vec<DriftRow> = Vec::new();
    let mut sorted_prev: Option<Vec<f64>> = None;
    for &t in &main {
        let xs = ens.at(t).expect("recorded");
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let stats = dist_stats(xs, None);
        let (q_lo, q_hi) = (quantile_sorted(&sorted, 0.5 - eps), quantile_sorted(&sorted, 0.5 + eps));
        let (mean_increment, mean_ci) = match &x0 {
            Some(x0) => {
                let d: Vec<f64> = xs.iter().zip(x0).map(|(a, b)| a - b).collect();
                let m = d.iter().sum::<f64>() / n as f64;
                let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
                (m, z * (var / n as f64).sqrt())
            }
            None => (f64::NAN, f64::NAN),
        };
        let certified_decrease = sorted_prev.as_ref().map(|p| q_hi < quantile_sorted(p, 0.5 - eps));
        let certified_increase = sorted_prev.as_ref().map(|p| q_lo > quantile_sorted(p, 0.5 + eps));
        let mode_gap_lower = bootstrap_mode_gap_lower(xs, stats.bandwidth, per_row, derive_seed(cfg.master_seed ^ BOOTSTRAP_TAG, t as u64));
        rows.push(DriftRow {
            t,
            stats,
            q_lo,
            q_hi,
            mean_increment,
            mean_ci,
            mean_ok: !(mean_increment.abs() > mean_ci),
            mode_le_median_point: stats.mode <= stats.median,
            mode_gap_lower,
            mode_le_median: mode_gap_lower <= 0.0,
            certified_decrease,
            certified_increase,
        });
        sorted_prev = Some(sorted);
    }

    let mut bound_rows = Vec::new();
    for &t in main.iter().filter(|&&t| t >= 2) {
        let prev = ens.at(t - 2).expect("recorded");
        let mut sp = prev.to_vec();
        sp.sort_by(f64::total_cmp);
        let m_prev = quantile_sorted(&sp, 0.5);
        let r = 0.5 * (quantile_sorted(&sp, 0.75) - quantile_sorted(&sp, 0.25));
        let p = prev.iter().filter(|&&x| (x - m_prev).abs() <= r).count() as f64 / n as f64;
        let d_min = (0..=100)
            .map(|k| cfg.alpha.derivative(m_prev - r + 2.0 * r * k as f64 / 100.0))
            .fold(f64::INFINITY, f64::min);
        let predicted = m_prev - p * cfg.alpha.eval(m_prev) * d_min;
        let mut st = ens.at(t).expect("recorded").to_vec();
        st.sort_by(f64::total_cmp);
        let m_t = quantile_sorted(&st, 0.5);
        bound_rows.push(DriftBoundRow {
            t,
            m_prev,
            m_t,
            r,
            p,
            predicted,
            holds: m_t <= predicted,
        });
    }

    // Only a certified increase contradicts the drift; too little separation for a
    // certified decrease is a power limit and is reported in the message.
    let drift = rows.iter().all(|r| r.certified_increase != Some(true));
    let uncertified: Vec<String> =
        rows.iter().filter(|r| r.certified_decrease == Some(false)).map(|r| r.t.to_string()).collect();
    // Mode ordering is asserted from t = 10 on; earlier laws are a few lattice atoms
    // and the smoothed mode only reflects the kernel.
    let shape = rows.iter().all(|r| r.mean_ok && (r.mode_le_median || (1..MODE_MIN_T).contains(&r.t)));
    let precondition = unimodal_init && regularity;
    let drift_persists = drift && uncertified.is_empty();
    let mut message = match (precondition, drift_persists) {
        (true, _) => String::new(),
        (false, true) => "regularity violated; drift persists".into(),
        (false, false) => "regularity violated".into(),
    };
    if !uncertified.is_empty() {
        if !message.is_empty() {
            message.push_str("; ");
        }
        message.push_str(&format!("decrease not certified at t = {}", uncertified.join(", ")));
    }
    Ok(DriftReport {
        n_paths: n,
        confidence,
        dkw_eps: eps,
        grid,
        unimodal_init,
        regularity,
        rows,
        bound_rows,
        status: CheckStatus::from(precondition, drift && shape),
        message,
    })
}

/// First time at which mode <= median enters the drift status.
pub const MODE_MIN_T: usize = 10;

const BOOTSTRAP_TAG: u64 = 0xB007_57A9;
const BOOTSTRAP_RESAMPLES: usize = 400;

/// Percentile-bootstrap lower bound at `confidence` on KDE mode minus median,
/// with the bandwidth held at the full-sample value.
fn bootstrap_mode_gap_lower(xs: &[f64], h: f64, confidence: f64, seed: u64) -> f64 {
    let n = xs.len();
    if !(h > 0.0) || n < 2 {
        return 0.0;
    }
    let mid = ((0.5 * n as f64) - 1e-9).ceil().max(1.0) as usize - 1;
    let mut gaps: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, b as u64));
            let mut buf: Vec<f64> = (0..n).map(|_| xs[rng.random_range(0..n)]).collect();
            let mode = kde_mode(&buf, h);
            let (_, median, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
            mode - *median
        })
        .collect();
    gaps.sort_by(f64::total_cmp);
    quantile_sorted(&gaps, 1.0 - confidence)
}

/// Solves `z + ξα(z) = y` by fixed-point iteration (contracting when `α′ < 1`).
fn invert_step(alpha: &AlphaFn, y: f64, plus: bool) -> f64 {
    let mut z = y;
    for _ in 0..1000 {
        let next = if plus { y - alpha.eval(z) } else { y + alpha.eval(z) };
        if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) {
            return next;
        }
        z = next;
    }
    z
}

fn exact_cdf_rec(init: &InitDist, alpha: &AlphaFn, x: f64, t: usize) -> f64 {
    if t == 0 {
        return init.cdf(x);
    }
    let zp = invert_step(alpha, x, true);
    let zm = invert_step(alpha, x, false);
    0.5 * (exact_cdf_rec(init, alpha, zp, t - 1) + exact_cdf_rec(init, alpha, zm, t - 1))
}

/// `F_t(x) = 2^{−t} Σ_s F₀(T_s^{−1}(x))`; needs increasing branch maps (`α′ < 1`).
pub fn exact_cdf(init: &InitDist, alpha: &AlphaFn, x: f64, t: usize) -> f64 {
    exact_cdf_rec(init, alpha, x, t)
}

/// Window density `f̂_t^{(w)}(x) = (F_t(x + w) − F_t(x))/w`.
pub fn window_density(init: &InitDist, alpha: &AlphaFn, x: f64, t: usize, w: f64) -> f64 {
    (exact_cdf(init, alpha, x + w, t) - exact_cdf(init, alpha, x, t)) / w
}

/// Shape of the window density outside the deterministic and CLT bands.
#[derive(Debug, Clone, Serialize)]
pub struct BandReport {
    pub t: usize,
    pub w: f64,
    pub kappa: f64,
    pub mode0: f64,
    pub y_minus: f64,
    pub y_plus: f64,
    pub width: f64,
    /// `2t α_max` over the reachable band.
    pub width_bound: f64,
    pub strict_points: usize,
    pub strict_violations: usize,
    pub clt_band: (f64, f64),
    pub max_clt_violation: f64,
    /// `(4/w)e^{−κ²/2}`.
    pub allowance: f64,
    pub regularity: bool,
    pub status: CheckStatus,
}

pub fn check_band_monotonicity(
    init: &InitDist,
    alpha: &AlphaFn,
    t: usize,
    w: f64,
    kappa: f64,
    grid_points: usize,
) -> Result<BandReport> {
    init.validate()?;
    let mode0 = init
        .mode()
        .filter(|_| init.is_unimodal_continuous())
        .ok_or_else(|| Error::InvalidInput("band check needs a unimodal continuous initial law".into()))?;
    if t > 16 {
        return Err(Error::HorizonTooLarge { t, max: 16 });
    }
    let (mut y_minus, mut y_plus) = (mode0, mode0);
    for _ in 0..t {
        y_minus -= alpha.checked(y_minus)?;
        y_plus += alpha.checked(y_plus)?;
    }
    let lo0 = init.quantile(1e-6);
    let hi0 = init.quantile(1.0 - 1e-6);
    let grid = grid_for(alpha, lo0.min(mode0), hi0.max(mode0), t)?;
    let regularity = grid.positive && grid.lipschitz_below_one();
    let band_grid = alpha.verify_on_grid(y_minus, y_plus, 1000);
    let alpha_max = band_grid.alpha_max;
    let width_bound = 2.0 * t as f64 * alpha_max;
    let width = y_plus - y_minus;
    let l = if grid.deriv_max < 1.0 { grid.deriv_max.max(0.0) } else { f64::NAN };
    let half = 2.0 / (1.0 - l) * alpha_max * kappa * (t as f64).sqrt();
    let clt_band = (mode0 - half - w, mode0 + half);
    let allowance = 4.0 / w * (-0.5 * kappa * kappa).exp();

    let x_lo = lo0 + (y_minus - mode0) - w;
    let x_hi = hi0 + (y_plus - mode0);
    let n = grid_points.max(3);
    let xs: Vec<f64> = (0..n).map(|i| x_lo + (x_hi - x_lo) * i as f64 / (n - 1) as f64).collect();
    let f: Vec<f64> = xs.iter().map(|&x| window_density(init, alpha, x, t, w)).collect();
    let tol = 1e-9;
    let mut strict_points = 0;
    let mut strict_violations = 0;
    for i in 0..n - 1 {
        if xs[i + 1] <= y_minus - w {
            strict_points += 1;
            if f[i + 1] < f[i] - tol {
                strict_violations += 1;
            }
        } else if xs[i] >= y_plus {
            strict_points += 1;
            if f[i + 1] > f[i] + tol {
                strict_violations += 1;
            }
        }
    }
    let mut max_clt_violation: f64 = 0.0;
    let mut right_min = f64::INFINITY;
    for (x, v) in xs.iter().zip(&f).rev() {
        if *x < clt_band.0 {
            max_clt_violation = max_clt_violation.max(v - right_min);
            right_min = right_min.min(*v);
        }
    }
    let mut running_min = f64::INFINITY;
    for (x, v) in xs.iter().zip(&f) {
        if *x > clt_band.1 {
            max_clt_violation = max_clt_violation.max(v - running_min);
            running_min = running_min.min(*v);
        }
    }
    let holds = strict_violations == 0 && width <= width_bound && max_clt_violation <= allowance;
    Ok(BandReport {
        t,
        w,
        kappa,
        mode0,
        y_minus,
        y_plus,
        width,
        width_bound,
        strict_points,
        strict_violations,
        clt_band,
        max_clt_violation,
        allowance,
        regularity,
        status: CheckStatus::from(regularity, holds),
    })
}
