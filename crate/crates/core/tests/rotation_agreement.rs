//! How often the closed-form growth factor of beta predicts the direction of
//! the observed one-step change when the loss is not a centred quadratic.
//!
//! For z = Theta^2 / 2 the formula is exact; with a nonzero target or a
//! cross-entropy loss the curvature of z varies along the step, so agreement
//! is a rate rather than an identity. The rates are printed and held to a floor.

use instabilitylab::dln::{gamma_beta, one_step_beta_ratio, regime_boundary, Dln2State, LossModel};
use instabilitylab::rng_from_seed;
use rand::Rng;

/// Agreement over random states and an eta grid inside the first-order regime,
/// skipping a 2% window around the regime boundary.
fn agreement(loss: &LossModel, seed: u64) -> (usize, usize) {
    let mut rng = rng_from_seed(seed);
    let (mut compared, mut agree, mut states) = (0, 0, 0);
    while states < 200 {
        let t1: f64 = rng.random_range(0.05..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let t2: f64 = t1.abs() * rng.random_range(1.5..10.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let s = Dln2State::new(t1, t2);
        let zp = loss.z_prime(s.product()).abs();
        let Ok(boundary) = regime_boundary(&s, loss) else {
            continue;
        };
        if zp < 1e-3 || !boundary.is_finite() {
            continue;
        }
        states += 1;
        for k in 1..=50 {
            let eta = k as f64 / (51.0 * zp);
            if (eta - boundary).abs() <= 0.02 * boundary.abs() {
                continue;
            }
            let (Ok(g), Ok(obs)) = (gamma_beta(&s, loss, eta), one_step_beta_ratio(&s, loss, eta)) else {
                continue;
            };
            compared += 1;
            agree += usize::from((g > 1.0) == (obs > 1.0));
        }
    }
    (agree, compared)
}

#[test]
fn centred_quadratic_agrees_everywhere() {
    let (agree, compared) = agreement(&LossModel::quadratic(0.0), 1);
    assert_eq!(agree, compared);
}

#[test]
fn shifted_and_cross_entropy_losses_agree_mostly() {
    let cases = [
        ("quadratic, target 1", LossModel::quadratic(1.0), 0.85),
        ("quadratic, target -0.5", LossModel::quadratic(-0.5), 0.85),
        ("mse, target 1", LossModel::mse(1.0), 0.85),
        // The curvature of z moves fastest for cross-entropy, so the prediction is weakest there.
        ("binary ce, label 1", LossModel::binary_ce(1.0).unwrap(), 0.6),
        ("binary ce, label -1", LossModel::binary_ce(-1.0).unwrap(), 0.6),
    ];
    for (i, (name, loss, floor)) in cases.iter().enumerate() {
        let (agree, compared) = agreement(loss, 10 + i as u64);
        let rate = agree as f64 / compared as f64;
        println!("{name}: {agree}/{compared} = {rate:.3}");
        assert!(compared > 1000, "{name}: only {compared} comparisons");
        assert!(rate >= *floor, "{name}: agreement {rate:.3} below {floor}");
    }
}
