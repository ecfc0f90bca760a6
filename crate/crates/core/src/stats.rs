//! Ensemble moments, sample cross-correlations and member subsampling.

use std::path::Path;

use nalgebra::DVector;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::io;
use crate::model::StateVector;
use crate::numerics::DenseMatrix;
use crate::observations::ObservationOperator;
use crate::rng;

/// Variances below this are treated as zero.
pub const ZERO_VARIANCE: f64 = 1e-14;

/// An ensemble of model states, one member per column (N x K).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DenseMatrix,
}

impl Ensemble {
    pub fn new(members: DenseMatrix) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::Config(format!("an ensemble needs K >= 2 members, got {}", members.ncols())));
        }
        if members.nrows() == 0 {
            return dim_err("ensemble with empty state");
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("ensemble has non-finite entries".into()));
        }
        Ok(Self { members })
    }

    /// Builds an ensemble without the finiteness scan; used inside cycling loops
    /// that check for blow-up themselves.
    pub(crate) fn from_members_unchecked(members: DenseMatrix) -> Self {
        debug_assert!(members.ncols() >= 2);
        Self { members }
    }

    pub fn n_state(&self) -> usize {
        self.members.nrows()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn members(&self) -> &DenseMatrix {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut DenseMatrix {
        &mut self.members
    }

    pub fn into_members(self) -> DenseMatrix {
        self.members
    }

    pub fn member(&self, k: usize) -> &[f64] {
        let n = self.n_state();
        &self.members.as_slice()[k * n..(k + 1) * n]
    }

    pub fn mean(&self) -> StateVector {
        let k = self.size() as f64;
        StateVector::new(self.members.column_sum().iter().map(|s| s / k).collect())
    }

    /// Observation-space ensemble `h(x^k)` (M x K).
    pub fn observed(&self, op: &ObservationOperator) -> Result<DenseMatrix> {
        if op.n_state() != self.n_state() {
            return dim_err("operator and ensemble disagree on n_state");
        }
        let mut y = DenseMatrix::zeros(op.n_obs(), self.size());
        for k in 0..self.size() {
            op.apply_into(self.member(k), y.column_mut(k).as_mut_slice());
        }
        Ok(y)
    }

    /// Ensemble formed by the given member columns.
    pub fn select(&self, cols: &[usize]) -> Result<Self> {
        Self::new(self.members.select_columns(cols))
    }

    pub fn is_finite(&self) -> bool {
        self.members.iter().all(|v| v.is_finite())
    }
}

/// Row means and the centered perturbation matrix of an N x K sample matrix.
pub fn center_rows(m: &DenseMatrix) -> (DVector<f64>, DenseMatrix) {
    let k = m.ncols() as f64;
    let mean = m.column_sum() / k;
    let mut x = m.clone();
    for mut col in x.column_iter_mut() {
        col -= &mean;
    }
    (mean, x)
}

/// Ensemble mean and perturbations `X` (column k = member k − mean).
pub fn mean_and_perturbations(e: &Ensemble) -> Result<(StateVector, DenseMatrix)> {
    if e.size() < 2 {
        return Err(Error::Config("need at least two members".into()));
    }
    let (mean, x) = center_rows(e.members());
    Ok((StateVector::new(mean.iter().copied().collect()), x))
}

/// Sample cross-correlations between state variables and observed variables.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation {
    /// N x M matrix; entry (i, j) correlates state i with observation j.
    pub entries: DenseMatrix,
    pub ensemble_size: usize,
}

impl CrossCorrelation {
    pub fn n_state(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.entries.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n_state();
        &self.entries.as_slice()[j * n..(j + 1) * n]
    }
}

fn row_std(m: &DenseMatrix, which: &'static str) -> Result<Vec<f64>> {
    let denom = (m.ncols() - 1) as f64;
    (0..m.nrows())
        .map(|i| {
            let var = m.row(i).iter().map(|v| v * v).sum::<f64>() / denom;
            if var < ZERO_VARIANCE {
                Err(Error::ZeroVariance { which, row: i })
            } else {
                Ok(var.sqrt())
            }
        })
        .collect()
}

/// Pearson correlations between the rows of centered perturbation matrices
/// `x` (N x K) and `y` (M x K).
pub fn cross_correlation(x: &DenseMatrix, y: &DenseMatrix) -> Result<CrossCorrelation> {
    let k = x.ncols();
    if y.ncols() != k {
        return dim_err(format!("X has {} columns, Y has {}", k, y.ncols()));
    }
    if k < 2 {
        return Err(Error::Config("correlations need K >= 2".into()));
    }
    let sx = row_std(x, "state")?;
    let sy = row_std(y, "observation")?;
    let mut r = x * y.transpose() / (k - 1) as f64;
    for (j, mut col) in r.column_iter_mut().enumerate() {
        for (i, v) in col.iter_mut().enumerate() {
            *v = (*v / (sx[i] * sy[j])).clamp(-1.0, 1.0);
        }
    }
    Ok(CrossCorrelation { entries: r, ensemble_size: k })
}

/// State/observation cross-correlation of an ensemble under operator `op`.
pub fn ensemble_correlation(e: &Ensemble, op: &ObservationOperator) -> Result<CrossCorrelation> {
    let (_, x) = center_rows(e.members());
    let (_, y) = center_rows(&e.observed(op)?);
    cross_correlation(&x, &y)
}

/// `C(n, k)` saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Member index sets of `count` subsamples of size `k` from `l` members.
///
/// Subset `s` is drawn from its own substream of `seed`, so it does not depend
/// on how many other subsets are requested.
pub fn subsample_indices(l: usize, k: usize, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > l {
        return Err(Error::Config(format!("subsample size K={k} must satisfy 2 <= K <= L={l}")));
    }
    if count == 0 || (count as u128) > binomial(l, k) {
        return Err(Error::Config(format!("S={count} must lie in 1..=C({l},{k})")));
    }
    Ok((0..count)
        .map(|s| {
            if k == l {
                return (0..l).collect();
            }
            let mut r = rng::rng_from(rng::derive_indexed(seed, &[s as u64]));
            let mut idx = index::sample(&mut r, l, k).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// `S` sub-ensembles of `K` members each, drawn without replacement within a subset.
pub fn subsample(e: &Ensemble, k: usize, s: usize, seed: u64) -> Result<Vec<Ensemble>> {
    subsample_indices(e.size(), k, s, seed)?
        .iter()
        .map(|cols| e.select(cols))
        .collect()
}

/// JSON sidecar of a correlation archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationArchiveHeader {
    #[serde(rename = "N")]
    pub n_state: usize,
    #[serde(rename = "M")]
    pub n_obs: usize,
    #[serde(rename = "K_sub")]
    pub k_sub: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub seed: u64,
    pub source_filter: String,
}

/// Writes correlations as a `(T·S, N, M)` row-major little-endian f64 payload.
pub fn save_correlations(path: &Path, items: &[CrossCorrelation], header: &CorrelationArchiveHeader) -> Result<()> {
    if items.len() != header.t * header.s {
        return dim_err(format!("{} matrices for T·S = {}", items.len(), header.t * header.s));
    }
    let (n, m) = (header.n_state, header.n_obs);
    let mut flat = Vec::with_capacity(items.len() * n * m);
    for r in items {
        if r.n_state() != n || r.n_obs() != m {
            return dim_err("archive entry with wrong shape");
        }
        for i in 0..n {
            for j in 0..m {
                flat.push(r.entries[(i, j)]);
            }
        }
    }
    io::write_atomic(path, &io::encode_f64(&flat))?;
    io::write_json(&io::sidecar_path(path), header)
}

pub fn load_correlations(path: &Path) -> Result<(Vec<CrossCorrelation>, CorrelationArchiveHeader)> {
    let header: CorrelationArchiveHeader = io::read_json(&io::sidecar_path(path))?;
    let (n, m) = (header.n_state, header.n_obs);
    let count = header.t * header.s;
    let flat = io::read_payload(path, count * n * m)?;
    let items = flat
        .chunks_exact(n * m)
        .map(|c| CrossCorrelation {
            entries: DenseMatrix::from_row_slice(n, m, c),
            ensemble_size: header.k_sub,
        })
        .collect();
    Ok((items, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut r = rng_from(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
    }

    #[test]
    fn two_member_scalar_moments() {
        let e = Ensemble::new(DenseMatrix::from_row_slice(1, 2, &[0.0, 2.0])).unwrap();
        let (mean, x) = mean_and_perturbations(&e).unwrap();
        assert_eq!(mean.as_slice(), &[1.0]);
        assert_eq!(x.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn identical_members_have_zero_perturbations() {
        let e = Ensemble::new(DenseMatrix::from_fn(5, 4, |i, _| i as f64)).unwrap();
        let (_, x) = mean_and_perturbations(&e).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perturbation_rows_sum_to_zero() {
        let e = Ensemble::new(random(40, 10, 1)).unwrap();
        let (_, x) = mean_and_perturbations(&e).unwrap();
        for i in 0..40 {
            assert!(x.row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_rejects_single_member() {
        assert!(Ensemble::new(DenseMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn self_and_anti_correlation() {
        let (_, x) = center_rows(&random(6, 8, 2));
        let r = cross_correlation(&x, &x).unwrap();
        let a = cross_correlation(&x, &(-&x)).unwrap();
        for i in 0..6 {
            assert!((r.entries[(i, i)] - 1.0).abs() < 1e-15);
            assert!((a.entries[(i, i)] + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn three_member_hand_values() {
        let x = DenseMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 1.0]);
        let y1 = DenseMatrix::from_row_slice(1, 3, &[1.0, 0.0, -1.0]);
        let y2 = DenseMatrix::from_row_slice(1, 3, &[0.0, -1.0, 1.0]);
        assert!((cross_correlation(&x, &y1).unwrap().entries[(0, 0)] + 1.0).abs() < 1e-15);
        assert!((cross_correlation(&x, &y2).unwrap().entries[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_row_is_named() {
        let mut x = random(4, 5, 3);
        x.row_mut(2).fill(0.0);
        let (_, x) = center_rows(&x);
        let (_, y) = center_rows(&random(2, 5, 4));
        match cross_correlation(&x, &y) {
            Err(Error::ZeroVariance { which: "state", row: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match cross_correlation(&y, &x) {
            Err(Error::ZeroVariance { which: "observation", row: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(40, 40), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(500, 40), u128::MAX);
        assert!(binomial(500, 5) > 1_000_000_000);
    }

    #[test]
    fn subsample_edge_cases() {
        let e = Ensemble::new(random(3, 6, 5)).unwrap();
        let full = subsample(&e, 6, 1, 0).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!(full[0], e);
        assert!(subsample(&e, 7, 1, 0).is_err());
        assert!(subsample(&e, 2, 16, 0).is_err());
        assert_eq!(subsample(&e, 2, 15, 0).unwrap().len(), 15);
        assert_eq!(subsample_indices(6, 3, 4, 9).unwrap(), subsample_indices(6, 3, 4, 9).unwrap());
        // Adding subsets does not perturb the earlier ones.
        let few = subsample_indices(50, 5, 3, 11).unwrap();
        let many = subsample_indices(50, 5, 10, 11).unwrap();
        assert_eq!(few[..], many[..3]);
    }

    #[test]
    fn archive_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corr.bin");
        let items: Vec<CrossCorrelation> = (0..4)
            .map(|s| CrossCorrelation { entries: random(5, 3, 10 + s), ensemble_size: 7 })
            .collect();
        let header = CorrelationArchiveHeader {
            n_state: 5,
            n_obs: 3,
            k_sub: 7,
            l: 20,
            t: 2,
            s: 2,
            seed: 1,
            source_filter: "etkf".into(),
        };
        save_correlations(&path, &items, &header).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Row-major (t, i, j): the second value is entry (0, 1) of the first matrix.
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), items[0].entries[(0, 1)]);
        let (back, h) = load_correlations(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, items);
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(load_correlations(&path).is_err());
    }

    proptest! {
        #[test]
        fn correlations_bounded_and_scale_invariant(seed in 0u64..500, scale in 0.01f64..100.0, row in 0usize..5) {
            let (_, x) = center_rows(&random(5, 6, seed));
            let (_, y) = center_rows(&random(3, 6, seed + 1000));
            let r = cross_correlation(&x, &y).unwrap();
            prop_assert!(r.entries.iter().all(|v| v.abs() <= 1.0 + 1e-12));
            let mut xs = x.clone();
            xs.row_mut(row).scale_mut(scale);
            let rs = cross_correlation(&xs, &y).unwrap();
            prop_assert!((rs.entries - &r.entries).amax() < 1e-12);
        }
    }
}
