//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use locmap::filters::{etkf_analysis_with_route, kalman_step, EtkfRoute, FilterConfig, LinearGaussianSystem, ObsErrorVariance};
use locmap::localization::{DiagonalMap, MapTensor};
use locmap::model::{nature_run, ModelConfig, Rk4};
use locmap::numerics::{symmetric_eig, DenseMatrix};
use locmap::observations::ObservationOperator;
use locmap::stats::{center_rows, cross_correlation, CrossCorrelation, Ensemble};
use locmap::training::CorrelationTrainingSet;
use locmap::LocalizationScheme;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut r = locmap::rng::rng_from(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
}

/// `A Aᵀ / n + shift I` for a Gaussian `A`.
pub fn random_spd(n: usize, shift: f64, seed: u64) -> DenseMatrix {
    let a = normal_matrix(n, n, seed);
    &a * a.transpose() / n as f64 + DenseMatrix::identity(n, n) * shift
}

/// Random matrix rescaled to spectral norm `radius`.
pub fn random_stable(n: usize, radius: f64, seed: u64) -> DenseMatrix {
    let a = normal_matrix(n, n, seed);
    let norm = a.clone().svd(false, false).singular_values[0];
    a * (radius / norm)
}

/// Ensemble whose sample mean and covariance equal `mean` and `cov` exactly.
pub fn exact_moment_ensemble(mean: &DVector<f64>, cov: &DenseMatrix, k: usize, seed: u64) -> Ensemble {
    let n = mean.len();
    assert!(k > n, "need K > N for a full-rank ensemble");
    let (_, w) = center_rows(&normal_matrix(n, k, seed));
    let sample = &w * w.transpose() / (k as f64 - 1.0);
    let whiten = symmetric_eig(&sample).unwrap().map_values(|l| l.powf(-0.5));
    let w = whiten * w;
    let root = cov.clone().cholesky().expect("SPD covariance").l();
    let mut x = root * w;
    for mut col in x.column_iter_mut() {
        col += mean;
    }
    Ensemble::new(x).unwrap()
}

pub fn sample_moments(e: &Ensemble) -> (DVector<f64>, DenseMatrix) {
    let (mean, x) = center_rows(e.members());
    let cov = &x * x.transpose() / (e.size() as f64 - 1.0);
    (mean, cov)
}

pub fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    (a - b).abs().max()
}

/// Worst mean / covariance mismatch between the ETKF (via `route`) and the
/// Kalman filter over one analysis and one forecast on a random stable
/// 4-dimensional system observed directly by `m` observations.
pub fn etkf_vs_kalman(m: usize, k: usize, route: EtkfRoute, seed: u64) -> (f64, f64) {
    let n = 4;
    let op = ObservationOperator::direct(m, n).unwrap();
    let h = op.linear_matrix().unwrap();
    let r_diag: Vec<f64> = (0..m).map(|j| 0.5 + 0.25 * j as f64).collect();
    let sys = LinearGaussianSystem {
        f: random_stable(n, 0.9, seed),
        q: random_spd(n, 0.1, seed + 1),
        h,
        r: DenseMatrix::from_diagonal(&DVector::from_vec(r_diag.clone())),
        mean: DVector::from_column_slice(normal_matrix(n, 1, seed + 2).as_slice()),
        cov: random_spd(n, 0.5, seed + 3),
    };
    let y: Vec<f64> = normal_matrix(m, 1, seed + 4).as_slice().to_vec();
    let prior = exact_moment_ensemble(&sys.mean, &sys.cov, k, seed + 5);
    let mut cfg = FilterConfig::new(k, 0.0, LocalizationScheme::None).unwrap();
    cfg.obs_error_variance = ObsErrorVariance::per_observation(r_diag);
    let analysis = etkf_analysis_with_route(&prior, &y, &op, &cfg, route).unwrap();
    let (mean_a, cov_a) = sample_moments(&analysis);
    let exact = sys.analysis(&y).unwrap();
    let mut mean_err = (&mean_a - &exact.mean).abs().max();
    let mut cov_err = max_abs_diff(&cov_a, &exact.cov);

    let next = kalman_step(&sys, &y).unwrap();
    let forecast = Ensemble::new(&sys.f * analysis.members()).unwrap();
    let (mean_f, cov_f) = sample_moments(&forecast);
    mean_err = mean_err.max((&mean_f - &next.mean).abs().max());
    cov_err = cov_err.max(max_abs_diff(&(cov_f + &sys.q), &next.cov));
    (mean_err, cov_err)
}

/// Monte-Carlo estimate of `E[(r - rho)^2]` for the sample correlation of
/// `k` draws from a bivariate normal with correlation `rho`.
pub fn correlation_mse(rho: f64, k: usize, trials: usize, seed: u64) -> f64 {
    let mut r = locmap::rng::rng_from(seed);
    let s = (1.0 - rho * rho).sqrt();
    let mut total = 0.0;
    for _ in 0..trials {
        let mut x = DenseMatrix::zeros(1, k);
        let mut y = DenseMatrix::zeros(1, k);
        for c in 0..k {
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            x[(0, c)] = a;
            y[(0, c)] = rho * a + s * b;
        }
        let rk = cross_correlation(&x, &y).unwrap().entries[(0, 0)];
        total += (rk - rho).powi(2);
    }
    total / trials as f64
}

/// Training set whose regressor is an exact linear image of random
/// regressands under `truth`.
pub fn synthetic_training_set(truth: &MapTensor, t: usize, seed: u64) -> CorrelationTrainingSet {
    let (n, m) = (truth.n_state(), truth.n_obs());
    let mut r = locmap::rng::rng_from(seed);
    let mut regressor = Vec::with_capacity(t);
    let mut regressands = Vec::with_capacity(t);
    for _ in 0..t {
        let rk = DenseMatrix::from_fn(n, m, |_, _| r.gen_range(-1.0..1.0));
        let rl = DenseMatrix::from_fn(n, m, |i, j| (0..n).map(|q| truth.get(q, i, j) * rk[(q, j)]).sum());
        regressands.push(CrossCorrelation { entries: rk, ensemble_size: 5 });
        regressor.push(CrossCorrelation { entries: rl, ensemble_size: 500 });
    }
    let meta = locmap::training::TrainingMeta { k: 5, l: 500, t, s: 1, seed, source: "synthetic".into() };
    CorrelationTrainingSet::new(regressor, regressands, meta).unwrap()
}

pub fn random_map(n: usize, m: usize, seed: u64) -> MapTensor {
    let mut r = locmap::rng::rng_from(seed);
    let entries = (0..n * n * m).map(|_| r.gen_range(-1.0..1.0)).collect();
    MapTensor::new(n, m, entries).unwrap()
}

pub fn max_map_diff(a: &MapTensor, b: &MapTensor) -> f64 {
    a.entries().iter().zip(b.entries()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn diagonal_max_diff(d: &DiagonalMap, value: f64) -> f64 {
    d.weights.iter().map(|w| (w - value).abs()).fold(0.0, f64::max)
}

/// Root-mean-square error after `1.0` time units with step `dt` against a
/// much finer reference, pooled over 16 attractor states 100 steps apart.
pub fn rk4_error(dt: f64, reference_dt: f64) -> f64 {
    let cfg = ModelConfig::lorenz96();
    let starts = nature_run(&cfg, 11, 2000, 1500).unwrap();
    let integrate = |start: &[f64], h: f64| {
        let mut x = start.to_vec();
        let mut rk = Rk4::new(ModelConfig::new(cfg.n_state, cfg.forcing, h).unwrap());
        assert!(rk.advance(&mut x, (1.0 / h).round() as usize));
        x
    };
    let mut sq = 0.0;
    let mut count = 0;
    for m in (0..16).map(|i| i * 100) {
        let start = starts.state(m);
        let fine = integrate(start, reference_dt);
        for (a, b) in integrate(start, dt).iter().zip(&fine) {
            sq += (a - b).powi(2);
            count += 1;
        }
    }
    (sq / count as f64).sqrt()
}
