//! Filter skill metrics and their time aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::stats::Ensemble;

/// Time-mean RMSE above which a run counts as divergent.
pub const DIVERGENCE_RMSE: f64 = 10.0;

/// Long-run standard deviation of the free Lorenz-96 model at F = 8.
pub const CLIMATOLOGICAL_STD: f64 = 3.6;

/// Fraction of climatology above which a run is flagged as having no skill.
pub const CLIMATOLOGY_FRACTION: f64 = 0.95;

pub fn rmse(analysis_mean: &[f64], truth: &[f64]) -> Result<f64> {
    if analysis_mean.len() != truth.len() || truth.is_empty() {
        return dim_err(format!("rmse of lengths {} and {}", analysis_mean.len(), truth.len()));
    }
    let ss: f64 = analysis_mean.iter().zip(truth).map(|(a, t)| (a - t) * (a - t)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// `sqrt( Σ_jk (δx_j^k)² / (N (K-1)) )`.
pub fn spread(e: &Ensemble) -> Result<f64> {
    let k = e.size();
    if k < 2 {
        return Err(Error::Config("spread needs K >= 2".into()));
    }
    let n = e.n_state();
    let mean = e.members().column_mean();
    let mut ss = 0.0;
    for col in e.members().column_iter() {
        for (v, m) in col.iter().zip(mean.iter()) {
            ss += (v - m) * (v - m);
        }
    }
    Ok((ss / (n * (k - 1)) as f64).sqrt())
}

/// Per-cycle diagnostics of one filter run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsSeries {
    pub rmse: Vec<f64>,
    pub spread: Vec<f64>,
    pub diverged: bool,
    /// Half-open cycle range `[start, end)` used for time means.
    pub window: (usize, usize),
}

impl DiagnosticsSeries {
    pub fn push(&mut self, rmse: f64, spread: f64) {
        self.rmse.push(rmse);
        self.spread.push(spread);
    }

    pub fn len(&self) -> usize {
        self.rmse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rmse.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_rmse: f64,
    pub mean_spread: f64,
    pub normalized_rmse: Option<f64>,
    pub diverged: bool,
    pub at_climatology: bool,
    pub cycles: usize,
}

/// Time means over the series window, normalized by `benchmark_rmse` when given.
pub fn aggregate(series: &DiagnosticsSeries, benchmark_rmse: Option<f64>) -> Result<Summary> {
    let (start, end) = series.window;
    if start >= end {
        return Err(Error::Config(format!("empty diagnostics window [{start}, {end})")));
    }
    if end > series.rmse.len() || series.spread.len() != series.rmse.len() {
        return Err(Error::Config(format!(
            "window [{start}, {end}) exceeds series of length {}",
            series.rmse.len()
        )));
    }
    let cycles = end - start;
    let non_finite = series.rmse.iter().chain(&series.spread).any(|v| !v.is_finite());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_rmse = mean(&series.rmse[start..end]);
    let mean_spread = mean(&series.spread[start..end]);
    let diverged = series.diverged || non_finite || !(mean_rmse <= DIVERGENCE_RMSE);
    let normalized_rmse = benchmark_rmse.map(|b| mean_rmse / b);
    Ok(Summary {
        mean_rmse,
        mean_spread,
        normalized_rmse,
        diverged,
        at_climatology: !diverged && mean_rmse >= CLIMATOLOGY_FRACTION * CLIMATOLOGICAL_STD,
        cycles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0; 4], &[0.0; 4]).unwrap(), 1.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(rmse(&[1.0, 5.0], &[2.0, 3.0]).unwrap(), rmse(&[2.0, 3.0], &[1.0, 5.0]).unwrap());
    }

    #[test]
    fn spread_values() {
        let same = Ensemble::new(DenseMatrix::from_element(3, 4, 2.0)).unwrap();
        assert_eq!(spread(&same).unwrap(), 0.0);
        let pair = Ensemble::new(DenseMatrix::from_row_slice(1, 2, &[-1.0, 1.0])).unwrap();
        assert!((spread(&pair).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let doubled = Ensemble::new(DenseMatrix::from_row_slice(1, 2, &[-2.0, 2.0])).unwrap();
        assert!((spread(&doubled).unwrap() - 2.0 * spread(&pair).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn spread_matches_frobenius_norm() {
        use rand::Rng;
        let mut r = crate::rng::rng_from(1);
        let e = Ensemble::new(DenseMatrix::from_fn(7, 5, |_, _| r.gen_range(-3.0..3.0))).unwrap();
        let (_, x) = crate::stats::mean_and_perturbations(&e).unwrap();
        let s = spread(&e).unwrap();
        assert!((s * s * 28.0 - x.norm_squared()).abs() < 1e-12);
    }

    fn series(values: Vec<f64>) -> DiagnosticsSeries {
        let n = values.len();
        DiagnosticsSeries { spread: values.clone(), rmse: values, diverged: false, window: (0, n) }
    }

    #[test]
    fn aggregate_normalizes() {
        let s = aggregate(&series(vec![2.0; 10]), Some(4.0)).unwrap();
        assert_eq!(s.normalized_rmse, Some(0.5));
        assert!(!s.diverged && !s.at_climatology);
        assert_eq!(s.cycles, 10);
    }

    #[test]
    fn any_nan_diverges_wherever_it_is() {
        for pos in [0, 5, 9] {
            let mut v = vec![1.0; 10];
            v[pos] = f64::NAN;
            let mut s = series(v);
            s.window = (3, 7);
            assert!(aggregate(&s, None).unwrap().diverged);
        }
        assert!(aggregate(&series(vec![11.0; 4]), None).unwrap().diverged);
    }

    #[test]
    fn climatological_error_is_flagged_not_divergent() {
        let s = aggregate(&series(vec![CLIMATOLOGICAL_STD; 50]), None).unwrap();
        assert!(!s.diverged);
        assert!(s.at_climatology);
    }

    #[test]
    fn empty_window_is_an_error() {
        let mut s = series(vec![1.0; 3]);
        s.window = (2, 2);
        assert!(aggregate(&s, None).is_err());
        s.window = (0, 4);
        assert!(aggregate(&s, None).is_err());
    }
}
