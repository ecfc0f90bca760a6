//! Deterministic square-root ETKF update in ensemble space.
//!
//! With `Z = R^{-1/2} Y` (M x K) the analysis weights derive from
//! `A = (K-1) I + Zᵀ Z`: mean weights `w̄ = A⁻¹ Zᵀ d` with
//! `d = R^{-1/2}(y - ȳ)`, and perturbation weights `W = [(K-1) A⁻¹]^{1/2}`
//! (symmetric root). Functions of `A` are evaluated either by decomposing
//! `A` itself (K x K) or, when `M < K`, through the spectrum of `Z Zᵀ`
//! (M x M), using `g(A) = g(K-1) I + Zᵀ G Z`.

use nalgebra::DVector;

use super::{inflate_in_place, FilterConfig};
use crate::error::{dim_err, Error, Result};
use crate::localization::LocalizationScheme;
use crate::numerics::{symmetric_eig, DenseMatrix};
use crate::observations::ObservationOperator;
use crate::stats::{center_rows, Ensemble};

/// Smallest admissible eigenvalue of the ensemble-space precision.
const DEGENERATE_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtkfRoute {
    /// Pick the cheaper of the two decompositions.
    Auto,
    /// Decompose the K x K ensemble-space matrix.
    EnsembleSpace,
    /// Decompose the M x M observation-space Gram matrix.
    ObservationSpace,
}

pub fn etkf_analysis(e: &Ensemble, y: &[f64], op: &ObservationOperator, cfg: &FilterConfig) -> Result<Ensemble> {
    etkf_analysis_with_route(e, y, op, cfg, EtkfRoute::Auto)
}

pub fn etkf_analysis_with_route(
    e: &Ensemble,
    y: &[f64],
    op: &ObservationOperator,
    cfg: &FilterConfig,
    route: EtkfRoute,
) -> Result<Ensemble> {
    if !matches!(cfg.localization, LocalizationScheme::None) {
        return Err(Error::Config("the ETKF assimilates globally; localization must be 'none'".into()));
    }
    if y.len() != op.n_obs() {
        return dim_err(format!("{} observations for an operator with M={}", y.len(), op.n_obs()));
    }
    cfg.obs_error_variance.validate(op.n_obs())?;
    let mut prior = e.clone();
    inflate_in_place(&mut prior, cfg.inflation)?;

    let k = prior.size();
    let m = op.n_obs();
    let km1 = (k - 1) as f64;
    let (x_mean, x) = center_rows(prior.members());
    let (y_mean, mut z) = center_rows(&prior.observed(op)?);
    let mut d = DVector::from_column_slice(y) - &y_mean;
    for j in 0..m {
        let s = 1.0 / cfg.obs_error_variance.get(j).sqrt();
        z.row_mut(j).scale_mut(s);
        d[j] *= s;
    }

    let use_obs_space = match route {
        EtkfRoute::Auto => m < k,
        EtkfRoute::EnsembleSpace => false,
        EtkfRoute::ObservationSpace => true,
    };

    let (mean_increment, mut members) = if use_obs_space {
        observation_space_update(&x, &z, &d, km1)?
    } else {
        ensemble_space_update(&x, &z, &d, km1)?
    };

    let analysis_mean = x_mean + mean_increment;
    for mut col in members.column_iter_mut() {
        col += &analysis_mean;
    }
    Ok(Ensemble::from_members_unchecked(members))
}

/// Returns the mean increment `X w̄` and the analysis perturbations `X W`.
fn ensemble_space_update(
    x: &DenseMatrix,
    z: &DenseMatrix,
    d: &DVector<f64>,
    km1: f64,
) -> Result<(DVector<f64>, DenseMatrix)> {
    let k = z.ncols();
    let mut a = z.transpose() * z;
    for i in 0..k {
        a[(i, i)] += km1;
    }
    let a = 0.5 * (&a + a.transpose());
    let eig = symmetric_eig(&a)?;
    if eig.values[0] < DEGENERATE_EIGENVALUE {
        return Err(Error::Singular(format!("ensemble-space eigenvalue {:e}", eig.values[0])));
    }
    let a_inv = eig.map_values(|l| 1.0 / l);
    let w_bar = a_inv * (z.transpose() * d);
    let w = eig.map_values(|l| (km1 / l).sqrt());
    Ok((x * w_bar, x * w))
}

fn observation_space_update(
    x: &DenseMatrix,
    z: &DenseMatrix,
    d: &DVector<f64>,
    km1: f64,
) -> Result<(DVector<f64>, DenseMatrix)> {
    let s = z * z.transpose();
    let s = 0.5 * (&s + s.transpose());
    let eig = symmetric_eig(&s)?;
    let lowest = km1 + eig.values[0].max(0.0);
    if lowest < DEGENERATE_EIGENVALUE {
        return Err(Error::Singular(format!("ensemble-space eigenvalue {lowest:e}")));
    }
    // Divided differences (g(K-1+μ) - g(K-1)) / μ, with the derivative as the
    // limit for vanishing μ.
    fn divided(g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64, km1: f64) -> impl Fn(f64) -> f64 {
        move |mu: f64| {
            let mu = mu.max(0.0);
            if mu > 1e-8 * km1 {
                (g(km1 + mu) - g(km1)) / mu
            } else {
                dg(km1)
            }
        }
    }
    let inv = |x: f64| 1.0 / x;
    let dinv = |x: f64| -1.0 / (x * x);
    let isqrt = |x: f64| x.powf(-0.5);
    let disqrt = |x: f64| -0.5 * x.powf(-1.5);
    let g_inv = eig.map_values(divided(inv, dinv, km1));
    let g_sqrt = eig.map_values(divided(isqrt, disqrt, km1));

    // X w̄ = (X Zᵀ) [ d/(K-1) + G_inv S d ]
    let xz = x * z.transpose();
    let inner = d / km1 + &g_inv * (&s * d);
    let mean_increment = &xz * inner;
    // X W = X + sqrt(K-1) (X Zᵀ) G_sqrt Z
    let perturbations = x + (xz * g_sqrt * km1.sqrt()) * z;
    Ok((mean_increment, perturbations))
}
