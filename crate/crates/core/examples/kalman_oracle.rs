//! Checks the ETKF against the exact Kalman filter on a linear-Gaussian
//! system, using an ensemble whose moments match the prior exactly.

use locmap::filters::{etkf_analysis_with_route, EtkfRoute, FilterConfig, LinearGaussianSystem};
use locmap::numerics::{symmetric_eig, DenseMatrix};
use locmap::observations::ObservationOperator;
use locmap::rng::rng_from;
use locmap::stats::{center_rows, Ensemble};
use locmap::LocalizationScheme;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

fn main() -> locmap::Result<()> {
    let (n, k) = (4, 12);
    let mut r = rng_from(3);
    let a: DenseMatrix = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut r));
    let cov = &a * a.transpose() / n as f64 + DenseMatrix::identity(n, n);
    let mean = DVector::from_fn(n, |i, _| i as f64);

    // Whiten a random sample, then color it with the prior covariance.
    let (_, w) = center_rows(&DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut r)));
    let sample_cov = &w * w.transpose() / (k as f64 - 1.0);
    let w = symmetric_eig(&sample_cov)?.map_values(|l| l.powf(-0.5)) * w;
    let mut x = cov.clone().cholesky().expect("SPD").l() * w;
    for mut col in x.column_iter_mut() {
        col += &mean;
    }
    let prior = Ensemble::new(x)?;

    let op = ObservationOperator::direct(2, n)?;
    let y = [1.5, -0.5];
    let sys = LinearGaussianSystem {
        f: DenseMatrix::identity(n, n),
        q: DenseMatrix::zeros(n, n),
        h: op.linear_matrix().unwrap(),
        r: DenseMatrix::identity(2, 2),
        mean,
        cov,
    };
    let exact = sys.analysis(&y)?;
    let cfg = FilterConfig::new(k, 0.0, LocalizationScheme::None)?;
    for route in [EtkfRoute::EnsembleSpace, EtkfRoute::ObservationSpace] {
        let post = etkf_analysis_with_route(&prior, &y, &op, &cfg, route)?;
        let (m, p) = center_rows(post.members());
        let p = &p * p.transpose() / (k as f64 - 1.0);
        println!(
            "{route:?}: mean error {:.2e}, covariance error {:.2e}",
            (m - &exact.mean).amax(),
            (p - &exact.cov).amax()
        );
    }
    Ok(())
}
