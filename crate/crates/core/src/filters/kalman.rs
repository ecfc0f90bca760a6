use nalgebra::DVector;

use crate::error::{dim_err, Error, Result};
use crate::numerics::{Cholesky, DenseMatrix};

/// A linear-Gaussian state-space model together with the current forecast
/// mean and covariance.
#[derive(Debug, Clone)]
pub struct LinearGaussianSystem {
    pub f: DenseMatrix,
    pub q: DenseMatrix,
    pub h: DenseMatrix,
    pub r: DenseMatrix,
    pub mean: DVector<f64>,
    pub cov: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct KalmanAnalysis {
    pub mean: DVector<f64>,
    pub cov: DenseMatrix,
    pub gain: DenseMatrix,
}

impl LinearGaussianSystem {
    fn check(&self, y: &[f64]) -> Result<()> {
        let n = self.mean.len();
        let m = self.h.nrows();
        let square = |a: &DenseMatrix, d: usize| a.nrows() == d && a.ncols() == d;
        if !square(&self.f, n) || !square(&self.q, n) || !square(&self.cov, n) || self.h.ncols() != n || !square(&self.r, m) {
            return dim_err("inconsistent linear-Gaussian system dimensions");
        }
        if y.len() != m {
            return dim_err(format!("{} observations for an operator with {} rows", y.len(), m));
        }
        Ok(())
    }

    /// Kalman analysis of the current forecast given observations `y`.
    pub fn analysis(&self, y: &[f64]) -> Result<KalmanAnalysis> {
        self.check(y)?;
        let n = self.mean.len();
        let pht = &self.cov * self.h.transpose();
        let innovation_cov = &self.h * &pht + &self.r;
        let chol = Cholesky::factor(&innovation_cov)
            .map_err(|e| Error::Singular(format!("innovation covariance: {e}")))?;
        // gain = P Hᵀ S⁻¹, built row by row from S gainᵀ = H P.
        let mut gain = DenseMatrix::zeros(n, self.h.nrows());
        for i in 0..n {
            let mut row: Vec<f64> = pht.row(i).iter().copied().collect();
            chol.solve_in_place(&mut row);
            for (j, v) in row.into_iter().enumerate() {
                gain[(i, j)] = v;
            }
        }
        let innovation = DVector::from_column_slice(y) - &self.h * &self.mean;
        let mean = &self.mean + &gain * innovation;
        let cov = (DenseMatrix::identity(n, n) - &gain * &self.h) * &self.cov;
        let cov = 0.5 * (&cov + cov.transpose());
        Ok(KalmanAnalysis { mean, cov, gain })
    }
}

/// One Kalman cycle: analysis with `y`, then propagation to the next forecast.
pub fn kalman_step(sys: &LinearGaussianSystem, y: &[f64]) -> Result<LinearGaussianSystem> {
    let a = sys.analysis(y)?;
    let mean = &sys.f * a.mean;
    let cov = &sys.f * a.cov * sys.f.transpose() + &sys.q;
    Ok(LinearGaussianSystem {
        mean,
        cov,
        ..sys.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(p: f64, h: f64) -> LinearGaussianSystem {
        let m = |v: f64| DenseMatrix::from_element(1, 1, v);
        LinearGaussianSystem {
            f: m(1.0),
            q: m(0.0),
            h: m(h),
            r: m(1.0),
            mean: DVector::from_element(1, 0.0),
            cov: m(p),
        }
    }

    #[test]
    fn unit_scalar_update() {
        let a = scalar(1.0, 1.0).analysis(&[1.0]).unwrap();
        assert!((a.mean[0] - 0.5).abs() < 1e-15);
        assert!((a.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_operator_leaves_forecast() {
        let a = scalar(2.0, 0.0).analysis(&[7.0]).unwrap();
        assert_eq!(a.mean[0], 0.0);
        assert_eq!(a.cov[(0, 0)], 2.0);
    }

    #[test]
    fn singular_innovation_is_an_error() {
        let mut s = scalar(0.0, 1.0);
        s.r = DenseMatrix::zeros(1, 1);
        assert!(matches!(s.analysis(&[1.0]), Err(Error::Singular(_))));
        assert!(scalar(1.0, 1.0).analysis(&[1.0, 2.0]).is_err());
    }
}
