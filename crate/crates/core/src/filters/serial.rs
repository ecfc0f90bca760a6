//! Serial square-root EnKF assimilating one scalar observation at a time.
//!
//! For observation `j` the observation-space ensemble is shifted to the
//! scalar Kalman mean and contracted by `sqrt(R / (R + P_yy))`; the increment
//! is regressed onto the state with the covariance
//! `P_xy = D_x^{1/2} r̃(·, j) sqrt(P_yy)`, where `r̃` is the sample
//! correlation column after the active localization transform.

use super::{inflate_in_place, FilterConfig};
use crate::error::{dim_err, Error, Result};
use crate::localization::PreparedLocalization;
use crate::observations::ObservationOperator;
use crate::stats::{Ensemble, ZERO_VARIANCE};

/// Order in which scalar observations are processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObsOrder {
    #[default]
    Ascending,
    Descending,
}

/// A serial EnKF specialized to one observation network; holds the prepared
/// localization and scratch buffers.
#[derive(Debug, Clone)]
pub struct SerialEnkf {
    op: ObservationOperator,
    cfg: FilterConfig,
    localization: PreparedLocalization,
    order: ObsOrder,
    y_prior: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
    corr: Vec<f64>,
    corr_loc: Vec<f64>,
}

impl SerialEnkf {
    pub fn new(op: ObservationOperator, cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.obs_error_variance.validate(op.n_obs())?;
        let localization = cfg.localization.prepare(&op)?;
        let n = op.n_state();
        Ok(Self {
            localization,
            order: ObsOrder::Ascending,
            y_prior: vec![0.0; cfg.ensemble_size],
            mean: vec![0.0; n],
            std: vec![0.0; n],
            corr: vec![0.0; n],
            corr_loc: vec![0.0; n],
            op,
            cfg,
        })
    }

    pub fn with_order(mut self, order: ObsOrder) -> Self {
        self.order = order;
        self
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &ObservationOperator {
        &self.op
    }

    /// Inflates the prior and assimilates every observation in `y`.
    pub fn analyze(&mut self, e: &mut Ensemble, y: &[f64]) -> Result<()> {
        let m = self.op.n_obs();
        if y.len() != m {
            return dim_err(format!("{} observations for an operator with M={m}", y.len()));
        }
        if e.n_state() != self.op.n_state() {
            return dim_err("ensemble and operator disagree on n_state");
        }
        inflate_in_place(e, self.cfg.inflation)?;
        match self.order {
            ObsOrder::Ascending => (0..m).try_for_each(|j| self.assimilate_one(e, j, y[j])),
            ObsOrder::Descending => (0..m).rev().try_for_each(|j| self.assimilate_one(e, j, y[j])),
        }
    }

    fn assimilate_one(&mut self, e: &mut Ensemble, j: usize, obs: f64) -> Result<()> {
        let n = e.n_state();
        let k = e.size();
        if self.y_prior.len() != k {
            self.y_prior.resize(k, 0.0);
        }
        let km1 = (k - 1) as f64;

        for kk in 0..k {
            self.y_prior[kk] = self.op.apply_component(j, e.member(kk));
        }
        let y_mean = self.y_prior.iter().sum::<f64>() / k as f64;
        let p_yy = self.y_prior.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / km1;
        if !(p_yy >= ZERO_VARIANCE) {
            return Err(Error::ZeroObservationVariance(j));
        }
        let sd_y = p_yy.sqrt();

        let data = e.members().as_slice();
        self.mean.fill(0.0);
        for member in data.chunks_exact(n) {
            for (m, v) in self.mean.iter_mut().zip(member) {
                *m += v;
            }
        }
        for m in self.mean.iter_mut() {
            *m /= k as f64;
        }
        self.std.fill(0.0);
        self.corr.fill(0.0);
        for (member, &yk) in data.chunks_exact(n).zip(&self.y_prior) {
            let dy = yk - y_mean;
            for i in 0..n {
                let dx = member[i] - self.mean[i];
                self.std[i] += dx * dx;
                self.corr[i] += dx * dy;
            }
        }
        for i in 0..n {
            let var = self.std[i] / km1;
            let cov = self.corr[i] / km1;
            if var < ZERO_VARIANCE {
                self.std[i] = 0.0;
                self.corr[i] = 0.0;
            } else {
                self.std[i] = var.sqrt();
                self.corr[i] = cov / (self.std[i] * sd_y);
            }
        }
        self.localization.apply(&self.corr, j, &mut self.corr_loc);

        let r = self.cfg.obs_error_variance.get(j);
        let post_mean = y_mean + p_yy / (p_yy + r) * (obs - y_mean);
        let contraction = (r / (r + p_yy)).sqrt();
        // Regression coefficient P_xy / P_yy = std_x r̃ / std_y.
        for i in 0..n {
            self.corr_loc[i] *= self.std[i] / sd_y;
        }
        let members = e.members_mut().as_mut_slice();
        for (member, &yk) in members.chunks_exact_mut(n).zip(&self.y_prior) {
            let dy = post_mean + contraction * (yk - y_mean) - yk;
            for (x, g) in member.iter_mut().zip(&self.corr_loc) {
                *x += g * dy;
            }
        }
        Ok(())
    }
}

/// One serial EnKF analysis of `e` with observations `y`.
pub fn serial_enkf_analysis(e: &Ensemble, y: &[f64], op: &ObservationOperator, cfg: &FilterConfig) -> Result<Ensemble> {
    let mut filter = SerialEnkf::new(op.clone(), cfg.clone())?;
    let mut out = e.clone();
    filter.analyze(&mut out, y)?;
    Ok(out)
}

/// Largest member difference between ascending and descending processing orders.
pub fn order_sensitivity(e: &Ensemble, y: &[f64], op: &ObservationOperator, cfg: &FilterConfig) -> Result<f64> {
    let mut fwd = SerialEnkf::new(op.clone(), cfg.clone())?;
    let mut rev = SerialEnkf::new(op.clone(), cfg.clone())?.with_order(ObsOrder::Descending);
    let (mut a, mut b) = (e.clone(), e.clone());
    fwd.analyze(&mut a, y)?;
    rev.analyze(&mut b, y)?;
    Ok((a.members() - b.members()).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::{LocalizationScheme, MapTensor};
    use crate::numerics::DenseMatrix;

    #[test]
    fn two_member_scalar_update() {
        let op = ObservationOperator::direct(1, 4).unwrap();
        // Only state 0 is observed; give the other states some spread too.
        let e = Ensemble::new(DenseMatrix::from_row_slice(4, 2, &[-1.0, 1.0, 0.0, 2.0, 5.0, 3.0, 1.0, 1.5])).unwrap();
        let cfg = FilterConfig::new(2, 0.0, LocalizationScheme::None).unwrap();
        let out = serial_enkf_analysis(&e, &[3.0], &op, &cfg).unwrap();
        let s = (1.0f64 / 3.0).sqrt();
        assert!((out.members()[(0, 0)] - (2.0 - s)).abs() < 1e-14);
        assert!((out.members()[(0, 1)] - (2.0 + s)).abs() < 1e-14);
    }

    #[test]
    fn identity_map_matches_no_localization_bitwise() {
        let op = ObservationOperator::direct(10, 40).unwrap();
        let mut r = crate::rng::rng_from(3);
        use rand_distr::{Distribution, StandardNormal};
        let e = Ensemble::new(DenseMatrix::from_fn(40, 6, |_, _| StandardNormal.sample(&mut r))).unwrap();
        let y: Vec<f64> = (0..10).map(|j| j as f64 * 0.1).collect();
        let none = FilterConfig::new(6, 0.05, LocalizationScheme::None).unwrap();
        let ident = FilterConfig::new(6, 0.05, LocalizationScheme::FullMap(MapTensor::identity(40, 10))).unwrap();
        let a = serial_enkf_analysis(&e, &y, &op, &none).unwrap();
        let b = serial_enkf_analysis(&e, &y, &op, &ident).unwrap();
        assert!(a.members().iter().zip(b.members().iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        let wide = FilterConfig::new(6, 0.05, LocalizationScheme::gaspari_cohn(1e9).unwrap()).unwrap();
        let c = serial_enkf_analysis(&e, &y, &op, &wide).unwrap();
        assert!((a.members() - c.members()).amax() < 1e-12);
    }

    #[test]
    fn collapsed_observation_is_an_error() {
        let op = ObservationOperator::direct(2, 4).unwrap();
        let e = Ensemble::new(DenseMatrix::from_row_slice(4, 2, &[1.0, 1.0, 0.0, 1.0, 2.0, 2.0, 0.0, 1.0])).unwrap();
        let cfg = FilterConfig::new(2, 0.0, LocalizationScheme::None).unwrap();
        assert!(matches!(serial_enkf_analysis(&e, &[0.0, 0.0], &op, &cfg), Err(Error::ZeroObservationVariance(0))));
        assert!(serial_enkf_analysis(&e, &[0.0], &op, &cfg).is_err());
    }
}
