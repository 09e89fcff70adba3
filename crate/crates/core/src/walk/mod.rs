//! State-dependent symmetric random walk `X_{t+1} = X_t + ξ_t α(X_t)`.
//!
//! Sign strings are encoded as bit masks: bit `i` set means `ξ_i = +1`.

mod alpha;
pub mod checks;
pub mod coupled;
mod enumerate;
mod ensemble;
pub mod stats;

pub use alpha::{AlphaFn, AlphaGrid};
pub use enumerate::{enumerate_paths, format_signs, Enumeration, ExactDist, MAX_ENUMERATION_T};
pub use ensemble::{path_signs, simulate_ensemble, InitDist, PathEnsemble, WalkConfig};

use crate::error::Result;

/// `x + ξα(x)`.
pub fn step(x: f64, xi: i8, alpha: &AlphaFn) -> Result<f64> {
    let a = alpha.checked(x)?;
    Ok(if xi >= 0 { x + a } else { x - a })
}

/// `(T₊₊, T₊₋, T₋₊, T₋₋)` from `x`.
pub fn two_step_branches(x: f64, alpha: &AlphaFn) -> Result<[f64; 4]> {
    let p = step(x, 1, alpha)?;
    let m = step(x, -1, alpha)?;
    Ok([step(p, 1, alpha)?, step(p, -1, alpha)?, step(m, 1, alpha)?, step(m, -1, alpha)?])
}

/// Hull `[lo_t, hi_t]` of states reachable in `t` steps from `[lo, hi]`.
///
/// `x + α(x)` is increasing, so the upper end follows the all-plus map. The
/// lower end minimises `x − α(x)` over the current hull, which reduces to the
/// all-minus map when `α′ < 1` and is approximated on 256 points otherwise.
pub fn reachable_range(alpha: &AlphaFn, lo: f64, hi: f64, t: usize) -> Result<(f64, f64)> {
    let (mut l, mut h) = (lo, hi);
    for _ in 0..t {
        let mut next_l = l - alpha.checked(l)?;
        if h > l {
            for k in 1..=256 {
                let x = l + (h - l) * k as f64 / 256.0;
                next_l = next_l.min(x - alpha.checked(x)?);
            }
        }
        h += alpha.checked(h)?;
        l = next_l;
    }
    Ok((l, h))
}
