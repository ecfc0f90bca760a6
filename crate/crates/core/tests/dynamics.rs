//! Integration checks of the Lorenz-96 integrator and the observation layer.

mod common;

use locmap::diagnostics::CLIMATOLOGICAL_STD;
use locmap::model::{nature_run, ModelConfig, Rk4, Trajectory};
use locmap::observations::{
    compute_extrema, generate_observations, generate_observations_with_noise, NonlinearObsParams, ObservationOperator,
};

#[test]
fn rk4_error_drops_sixteenfold_per_halving() {
    let reference = 0.05 / 64.0;
    let e: Vec<f64> = [0.05, 0.025, 0.0125].iter().map(|&dt| common::rk4_error(dt, reference)).collect();
    for w in e.windows(2) {
        let ratio = w[0] / w[1];
        assert!((12.0..=20.0).contains(&ratio), "errors {e:?}");
    }
}

#[test]
fn uniform_state_follows_the_rk4_stability_polynomial() {
    // A spatially uniform state obeys dx/dt = F - x, so one RK4 step maps
    // x - F to (x - F) * (1 - h + h^2/2 - h^3/6 + h^4/24).
    let cfg = ModelConfig::lorenz96();
    let h = cfg.dt;
    let growth = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
    let mut x = vec![3.0; 40];
    let mut rk = Rk4::new(cfg);
    let mut expected = 3.0 - 8.0;
    for _ in 0..200 {
        assert!(rk.step(&mut x));
        expected *= growth;
        for &v in &x {
            assert!((v - (8.0 + expected)).abs() < 1e-12);
        }
    }
}

#[test]
fn attractor_statistics_and_long_run_stability() {
    let cfg = ModelConfig::lorenz96();
    let truth = nature_run(&cfg, 3, 1000, 30_000).unwrap();
    assert_eq!(truth.len(), 30_001);
    assert!(truth.as_rows().iter().all(|v| v.is_finite() && v.abs() < 1e6));

    let n = truth.n_state();
    let mean = truth.as_rows().iter().sum::<f64>() / truth.as_rows().len() as f64;
    let var = truth.as_rows().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / truth.as_rows().len() as f64;
    let std = var.sqrt();
    assert!((std - CLIMATOLOGICAL_STD).abs() < 0.3, "climatological std {std}");
    assert!(mean > 1.5 && mean < 3.0, "climatological mean {mean}");
    assert_eq!(n, 40);
}

fn short_truth() -> Trajectory {
    nature_run(&ModelConfig::lorenz96(), 5, 500, 4000).unwrap()
}

#[test]
fn observation_noise_is_standard_normal() {
    let truth = short_truth();
    let op = ObservationOperator::direct(20, 40).unwrap();
    let noisy = generate_observations(&truth, &op, 2, 9).unwrap();
    let clean = generate_observations_with_noise(&truth, &op, 2, 9, 0.0).unwrap();
    assert_eq!(noisy.len(), 2000);
    let eps: Vec<f64> = noisy
        .iter()
        .zip(&clean)
        .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect::<Vec<_>>())
        .collect();
    let n = eps.len() as f64;
    let mean = eps.iter().sum::<f64>() / n;
    let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let kurt = eps.iter().map(|e| (e - mean).powi(4)).sum::<f64>() / n / (var * var);
    // 40 000 draws: standard errors 0.005 (mean), 0.007 (variance), 0.025 (kurtosis).
    assert!(mean.abs() < 0.025, "mean {mean}");
    assert!((var - 1.0).abs() < 0.035, "variance {var}");
    assert!((kurt - 3.0).abs() < 0.15, "kurtosis {kurt}");
    let lag1 = eps.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / n;
    assert!(lag1.abs() < 0.025, "lag-one correlation {lag1}");
}

#[test]
fn observations_track_the_truth_at_the_stride() {
    let truth = short_truth();
    let (a, b) = compute_extrema(&truth).unwrap();
    for op in [
        ObservationOperator::direct(10, 40).unwrap(),
        ObservationOperator::indirect(40).unwrap(),
        ObservationOperator::nonlinear(10, 40, NonlinearObsParams::new(a, b).unwrap()).unwrap(),
    ] {
        let clean = generate_observations_with_noise(&truth, &op, 5, 1, 0.0).unwrap();
        assert_eq!(clean.len(), 800);
        for rec in clean.iter().step_by(97) {
            assert_eq!(rec.values, op.apply(truth.state(5 * rec.time_index)).unwrap());
        }
    }
}
