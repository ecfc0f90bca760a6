//! Ensemble filters: the ETKF regressor generator, the serial EnKF with
//! pluggable localization, multiplicative inflation, and a linear Kalman
//! filter used as a reference.

mod etkf;
mod kalman;
mod serial;

pub use etkf::{etkf_analysis, etkf_analysis_with_route, EtkfRoute};
pub use kalman::{kalman_step, KalmanAnalysis, LinearGaussianSystem};
pub use serial::{order_sensitivity, serial_enkf_analysis, ObsOrder, SerialEnkf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::localization::LocalizationScheme;
use crate::model::{ModelConfig, Rk4};
use crate::stats::Ensemble;

/// Members at or above this count are propagated in parallel.
const PARALLEL_FORECAST_MEMBERS: usize = 64;

/// Diagonal observation-error variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsErrorVariance(Vec<f64>);

impl ObsErrorVariance {
    /// The same variance for every observation.
    pub fn uniform(v: f64) -> Self {
        Self(vec![v])
    }

    pub fn per_observation(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn get(&self, j: usize) -> f64 {
        if self.0.len() == 1 {
            self.0[0]
        } else {
            self.0[j]
        }
    }

    pub(crate) fn validate(&self, n_obs: usize) -> Result<()> {
        if self.0.len() != 1 && self.0.len() != n_obs {
            return Err(Error::Dimension(format!("{} error variances for {} observations", self.0.len(), n_obs)));
        }
        if self.0.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("observation error variances must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ObsErrorVariance {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub ensemble_size: usize,
    /// Multiplicative inflation `f`; prior covariance is scaled by `1 + f`.
    pub inflation: f64,
    pub localization: LocalizationScheme,
    pub obs_error_variance: ObsErrorVariance,
}

impl FilterConfig {
    pub fn new(ensemble_size: usize, inflation: f64, localization: LocalizationScheme) -> Result<Self> {
        let cfg = Self {
            ensemble_size,
            inflation,
            localization,
            obs_error_variance: ObsErrorVariance::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::Config(format!("ensemble size must be >= 2, got {}", self.ensemble_size)));
        }
        if !(self.inflation >= 0.0) || !self.inflation.is_finite() {
            return Err(Error::Config(format!("inflation must be >= 0, got {}", self.inflation)));
        }
        Ok(())
    }
}

/// Scales perturbations by `sqrt(1 + f)` about the unchanged mean.
pub fn inflate(e: &Ensemble, f: f64) -> Result<Ensemble> {
    let mut out = e.clone();
    inflate_in_place(&mut out, f)?;
    Ok(out)
}

pub fn inflate_in_place(e: &mut Ensemble, f: f64) -> Result<()> {
    if !(f >= 0.0) {
        return Err(Error::Config(format!("inflation must be >= 0, got {f}")));
    }
    if f == 0.0 {
        return Ok(());
    }
    let scale = (1.0 + f).sqrt();
    let mean = e.members().column_mean();
    for mut col in e.members_mut().column_iter_mut() {
        for (v, m) in col.iter_mut().zip(mean.iter()) {
            *v = m + scale * (*v - m);
        }
    }
    Ok(())
}

/// Outcome of propagating an ensemble.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub ensemble: Ensemble,
    pub blown_up: bool,
}

/// Advances every member `n_steps` RK4 steps. Returns `false` on blow-up.
pub fn forecast_in_place(e: &mut Ensemble, config: &ModelConfig, n_steps: usize) -> bool {
    let n = e.n_state();
    let k = e.size();
    let data = e.members_mut().as_mut_slice();
    if k >= PARALLEL_FORECAST_MEMBERS {
        data.par_chunks_mut(n)
            .map_init(|| Rk4::new(*config), |rk, member| rk.advance(member, n_steps))
            .collect::<Vec<bool>>()
            .into_iter()
            .all(|ok| ok)
    } else {
        let mut rk = Rk4::new(*config);
        let mut ok = true;
        for member in data.chunks_mut(n) {
            ok &= rk.advance(member, n_steps);
        }
        ok
    }
}

pub fn forecast(e: &Ensemble, config: &ModelConfig, n_steps: usize) -> Result<Forecast> {
    if n_steps == 0 {
        return Err(Error::Config("forecast needs n_steps >= 1".into()));
    }
    if e.n_state() != config.n_state {
        return Err(Error::Dimension("ensemble and model disagree on n_state".into()));
    }
    let mut ensemble = e.clone();
    let ok = forecast_in_place(&mut ensemble, config, n_steps);
    Ok(Forecast { ensemble, blown_up: !ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rk4_step, StateVector};
    use crate::numerics::DenseMatrix;
    use crate::stats::mean_and_perturbations;

    fn sample_cov(e: &Ensemble) -> DenseMatrix {
        let (_, x) = mean_and_perturbations(e).unwrap();
        &x * x.transpose() / (e.size() - 1) as f64
    }

    fn random_ensemble(n: usize, k: usize, seed: u64) -> Ensemble {
        use rand_distr::{Distribution, StandardNormal};
        let mut r = crate::rng::rng_from(seed);
        Ensemble::new(DenseMatrix::from_fn(n, k, |_, _| 3.0 + { let v: f64 = StandardNormal.sample(&mut r); v })).unwrap()
    }

    #[test]
    fn zero_inflation_is_identity() {
        let e = random_ensemble(5, 4, 1);
        assert_eq!(inflate(&e, 0.0).unwrap(), e);
        assert!(inflate(&e, -0.1).is_err());
    }

    #[test]
    fn inflation_scales_covariance() {
        let e = random_ensemble(6, 8, 2);
        let inflated = inflate(&e, 0.21).unwrap();
        let (p0, p1) = (sample_cov(&e), sample_cov(&inflated));
        assert!((p1 - p0 * 1.21).amax() < 1e-12);
        let (m0, _) = mean_and_perturbations(&e).unwrap();
        let (m1, _) = mean_and_perturbations(&inflated).unwrap();
        for (a, b) in m0.iter().zip(m1.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inflating_two_members() {
        let e = Ensemble::new(DenseMatrix::from_row_slice(1, 2, &[-1.0, 1.0])).unwrap();
        let out = inflate(&e, 3.0).unwrap();
        assert_eq!(out.members().as_slice(), &[-2.0, 2.0]);
    }

    #[test]
    fn forecast_of_fixed_point_is_unchanged() {
        let cfg = ModelConfig::lorenz96();
        let e = Ensemble::new(DenseMatrix::from_element(40, 3, 8.0)).unwrap();
        let f = forecast(&e, &cfg, 7).unwrap();
        assert!(!f.blown_up);
        assert_eq!(f.ensemble, e);
    }

    #[test]
    fn forecast_matches_iterated_rk4_per_member() {
        let cfg = ModelConfig::lorenz96();
        let e = random_ensemble(40, 3, 4);
        let f = forecast(&e, &cfg, 5).unwrap();
        for k in 0..3 {
            let mut s = StateVector::new(e.member(k).to_vec());
            for _ in 0..5 {
                s = rk4_step(&s, &cfg).unwrap().state;
            }
            assert_eq!(f.ensemble.member(k), s.as_slice());
        }
    }

    #[test]
    fn forecast_commutes_with_member_permutation() {
        let cfg = ModelConfig::lorenz96();
        for k in [5, 70] {
            let e = random_ensemble(40, k, 5);
            let perm: Vec<usize> = (0..k).rev().collect();
            let a = forecast(&e.select(&perm).unwrap(), &cfg, 3).unwrap().ensemble;
            let b = forecast(&e, &cfg, 3).unwrap().ensemble.select(&perm).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn forecast_reports_blow_up() {
        let cfg = ModelConfig::lorenz96();
        let mut m = DenseMatrix::from_element(40, 2, 1.0);
        m[(0, 1)] = 5e5;
        m[(1, 1)] = -5e5;
        let e = Ensemble::new(m).unwrap();
        assert!(forecast(&e, &cfg, 10).unwrap().blown_up);
        assert!(forecast(&e, &cfg, 0).is_err());
    }
}
