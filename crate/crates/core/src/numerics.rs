//! Dense linear-algebra kernels: normal-equation least squares with a ridge
//! fallback, and a symmetric eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_err, Error, Result};

/// Column-major dense matrix used throughout the crate.
pub type DenseMatrix = DMatrix<f64>;

/// Relative pivot size below which a Cholesky factorization is declared singular.
const PIVOT_TOLERANCE: f64 = 1e-13;

/// Scale of the fallback ridge relative to `trace(AᵀA) / N`.
pub const FALLBACK_RIDGE_SCALE: f64 = 1e-8;

/// Symmetry tolerance accepted by [`symmetric_eig`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// `argmin ‖A u − b‖² + λ‖u‖²`.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub design: DenseMatrix,
    pub target: Vec<f64>,
    pub ridge: f64,
}

impl RegressionProblem {
    pub fn new(design: DenseMatrix, target: Vec<f64>, ridge: f64) -> Result<Self> {
        if design.nrows() != target.len() {
            return dim_err(format!("design has {} rows, target has {}", design.nrows(), target.len()));
        }
        if design.nrows() == 0 || design.ncols() == 0 {
            return dim_err("empty design matrix");
        }
        if ridge < 0.0 || !ridge.is_finite() {
            return Err(Error::Config(format!("ridge must be nonnegative, got {ridge}")));
        }
        Ok(Self { design, target, ridge })
    }
}

/// How a normal-equation solve was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    /// Ridge actually added to the diagonal.
    pub ridge: f64,
    /// True when the unregularized system was singular and the fallback ridge was used.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct LeastSquaresSolution {
    pub coefficients: Vec<f64>,
    pub info: SolveInfo,
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: DenseMatrix,
}

impl Cholesky {
    /// Factors `m`; fails when a pivot is not safely positive.
    pub fn factor(m: &DenseMatrix) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return dim_err("Cholesky needs a square matrix");
        }
        let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Singular("zero or non-finite diagonal".into()));
        }
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > PIVOT_TOLERANCE * scale) {
                return Err(Error::Singular(format!("pivot {j} is {d:e} (scale {scale:e})")));
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    /// Solves `m x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.lower;
        let n = l.nrows();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l[(k, i)] * b[k];
            }
            b[i] = s / l[(i, i)];
        }
    }
}

/// Factors a Gram matrix `G = AᵀA` with ridge `λ`, retrying with the
/// fallback ridge when `λ = 0` and `G` is singular.
pub fn factor_normal(gram: &DenseMatrix, ridge: f64) -> Result<(Cholesky, SolveInfo)> {
    let n = gram.nrows();
    let with_ridge = |lambda: f64| {
        let mut g = gram.clone();
        for i in 0..n {
            g[(i, i)] += lambda;
        }
        Cholesky::factor(&g)
    };
    match with_ridge(ridge) {
        Ok(c) => Ok((c, SolveInfo { ridge, fallback: false })),
        Err(Error::Singular(_)) if ridge == 0.0 => {
            let lambda = FALLBACK_RIDGE_SCALE * gram.trace() / n as f64;
            if !(lambda > 0.0) {
                return Err(Error::Singular("normal matrix has zero trace".into()));
            }
            let c = with_ridge(lambda)?;
            Ok((c, SolveInfo { ridge: lambda, fallback: true }))
        }
        Err(e) => Err(e),
    }
}

/// Solves the regularized least-squares problem through its normal equations.
pub fn solve_least_squares(p: &RegressionProblem) -> Result<LeastSquaresSolution> {
    let a = &p.design;
    let gram = a.transpose() * a;
    let rhs = a.transpose() * DVector::from_column_slice(&p.target);
    let (chol, info) = factor_normal(&gram, p.ridge)?;
    let mut u: Vec<f64> = rhs.iter().copied().collect();
    chol.solve_in_place(&mut u);
    Ok(LeastSquaresSolution { coefficients: u, info })
}

/// Ascending eigenvalues and matching orthonormal eigenvectors (as columns).
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl Eigen {
    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let mut scaled = self.vectors.clone();
        for (k, &lam) in self.values.iter().enumerate() {
            let s = f(lam);
            scaled.column_mut(k).scale_mut(s);
        }
        scaled * self.vectors.transpose()
    }
}

pub fn max_asymmetry(m: &DenseMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub fn symmetric_eig(m: &DenseMatrix) -> Result<Eigen> {
    if m.nrows() != m.ncols() {
        return dim_err(format!("eigendecomposition needs a square matrix, got {}x{}", m.nrows(), m.ncols()));
    }
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DenseMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(Eigen { values, vectors })
}
