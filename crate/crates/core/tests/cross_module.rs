//! Agreement between modules that compute the same quantity along different routes.

use instabilitylab::dln::{gd_trajectory, Dln2State, LossModel};
use instabilitylab::optim::{run_optimizer, Dln2Problem, OptimizerConfig, OptimizerKind};
use instabilitylab::rmt::{sample_spiked, trial_overlap, SpikedModelConfig};
use instabilitylab::subspace::principal_angles;
use instabilitylab::toytrain::{
    train, Activation, Dataset, DiagnosticsConfig, HvpMethod, Intervention, MlpArch, MlpModel, TrainConfig, TrainLoss,
};
use instabilitylab::walk::checks::exact_cdf;
use instabilitylab::walk::{simulate_ensemble, AlphaFn, InitDist, WalkConfig};
use instabilitylab::{DMatrix, DVector, OrthonormalBasis};

#[test]
fn optimizer_driver_gd_matches_closed_form_trajectory() {
    for (loss, eta) in [(LossModel::quadratic(0.0), 0.015), (LossModel::mse(1.0), 0.004), (LossModel::quadratic(1.0), 0.01)] {
        let s0 = Dln2State::new(-0.1, 10.0);
        let traj = gd_trajectory(s0, &loss, eta, 30);
        let cfg = OptimizerConfig { eta, ..OptimizerConfig::default() };
        let problem = Dln2Problem { loss };
        let theta0 = DVector::from_vec(vec![s0.theta1, s0.theta2]);
        let (records, _) = run_optimizer(OptimizerKind::Gd, &cfg, &problem, &theta0, 30, 0).unwrap();
        assert_eq!(records.len(), traj.points.len());
        for (r, p) in records.iter().zip(&traj.points) {
            let norm = p.state.theta1.hypot(p.state.theta2);
            assert!((r.theta_norm - norm).abs() <= 1e-12 * (1.0 + norm), "step {}", r.step);
            assert!((r.loss - p.loss).abs() <= 1e-12 * (1.0 + p.loss.abs()), "step {}: {} vs {}", r.step, r.loss, p.loss);
            assert!((r.lambda_eff - p.lambda1).abs() <= 1e-12 * (1.0 + p.lambda1));
        }
    }
}

#[test]
fn spike_overlap_is_squared_cosine_of_principal_angle() {
    for (sigma, lambda1, seed) in [(0.5, 3.0, 1), (1.0, 1.5, 2), (0.2, 0.5, 3)] {
        let cfg = SpikedModelConfig::new(80, 4, sigma, lambda1, seed).unwrap();
        let m = sample_spiked(&cfg).unwrap();
        let eig = m.symmetric_eigen();
        let top = eig.eigenvalues.imax();
        let v = OrthonormalBasis::orthonormalize(DMatrix::from_column_slice(80, 1, eig.eigenvectors.column(top).as_slice())).unwrap();
        let mut e = DMatrix::zeros(80, 1);
        e[(0, 0)] = 1.0;
        let e1 = OrthonormalBasis::new(e).unwrap();
        let angle = principal_angles(&v, &e1).unwrap().angles[0];
        let overlap = trial_overlap(&cfg).unwrap();
        assert!((overlap - angle.cos().powi(2)).abs() <= 1e-8, "{overlap} vs {}", angle.cos().powi(2));
    }
}

#[test]
fn eta_intervention_shows_in_training_records() {
    let data = Dataset::blobs(32, 2, 2.0, 4).unwrap();
    let arch = MlpArch::with_hidden(vec![2, 6, 2], Activation::Relu).unwrap();
    let model = MlpModel::init(arch, 5);
    let cfg = TrainConfig {
        loss: TrainLoss::Ce,
        optimizer: OptimizerKind::Gd,
        opt: OptimizerConfig { eta: 0.5, ..OptimizerConfig::default() },
        epochs: 6,
        seed: 0,
        diagnostics: DiagnosticsConfig {
            hvp: HvpMethod::Exact,
            lanczos_order: 10,
            ..DiagnosticsConfig::default()
        },
        interventions: vec![Intervention::Eta { epoch: 3, eta: 0.05 }],
    };
    let log = train(&model, &data, &cfg).unwrap();
    let etas: Vec<f64> = log.records.iter().map(|r| r.eta).collect();
    assert_eq!(etas, [0.5, 0.5, 0.5, 0.05, 0.05, 0.05]);
    // Sharpness from the diagnostics is a positive number at every epoch on a ReLU net with CE.
    assert!(log.records.iter().all(|r| r.lambda_max.is_some_and(|l| l.is_finite())));
}

#[test]
fn monte_carlo_cdf_sits_inside_dkw_band_of_exact_law() {
    let alpha = AlphaFn::sigmoid(0.05);
    let init = InitDist::Normal { mean: 0.0, sd: 1.0 };
    let n = 20_000;
    let cfg = WalkConfig {
        alpha: alpha.clone(),
        init: init.clone(),
        horizon: 8,
        n_paths: n,
        master_seed: 11,
        checkpoints: vec![8],
    };
    let ens = simulate_ensemble(&cfg).unwrap();
    let mut xs = ens.at(8).unwrap().to_vec();
    xs.sort_by(f64::total_cmp);
    // Two-sided DKW band at confidence 0.999.
    let eps = ((2.0f64 / 1e-3).ln() / (2.0 * n as f64)).sqrt();
    let mut worst = 0.0f64;
    for (i, &x) in xs.iter().enumerate().step_by(97) {
        let f = exact_cdf(&init, &alpha, x, 8);
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        worst = worst.max((f - lo).abs()).max((f - hi).abs());
    }
    assert!(worst <= eps, "sup gap {worst:.4} exceeds band {eps:.4}");
}
