//! Fitting localization maps to archived correlation statistics, and tuning
//! the Gaspari-Cohn half-width.
//!
//! For every observation `j` and state `i` the map vector `L(·, i, j)` is the
//! least-squares solution of `r^K_{m,s}(·, j)ᵀ u ≈ r^L_m(i, j)` over all
//! training samples `(m, s)`. The design depends on `j` only, so the
//! normal equations are accumulated once per `j` (Gram matrix `G_j` and the
//! cross moments `C_j` for all targets `i` at once) and the factorization of
//! `G_j` is shared by the `N` solves.

use std::path::Path;

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycling::{run_serial, Twin, Window};
use crate::error::{dim_err, Error, Result};
use crate::filters::FilterConfig;
use crate::localization::{DiagonalMap, LocalizationScheme, MapTensor};
use crate::numerics::{factor_normal, DenseMatrix};
use crate::observations::ObservationOperator;
use crate::stats::{ensemble_correlation, subsample, CrossCorrelation, Ensemble};

/// Samples folded into the normal equations per matrix product.
pub const BATCH: usize = 128;

/// Provenance of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub k: usize,
    pub l: usize,
    pub t: usize,
    pub s: usize,
    pub seed: u64,
    pub source: String,
}

/// Regressor correlations `r^L_m` (T of them) and subsampled regressands
/// `r^K_{m,s}` (T·S, sample `m·S + s` pairs with regressor `m`).
#[derive(Debug, Clone)]
pub struct CorrelationTrainingSet {
    pub regressor: Vec<CrossCorrelation>,
    pub regressands: Vec<CrossCorrelation>,
    pub n_state: usize,
    pub n_obs: usize,
    pub meta: TrainingMeta,
}

impl CorrelationTrainingSet {
    pub fn new(regressor: Vec<CrossCorrelation>, regressands: Vec<CrossCorrelation>, meta: TrainingMeta) -> Result<Self> {
        let first = regressor.first().ok_or_else(|| Error::Config("empty training set".into()))?;
        let (n, m) = (first.n_state(), first.n_obs());
        if meta.s == 0 || regressands.len() != regressor.len() * meta.s {
            return dim_err(format!(
                "{} regressands for {} regressors with S={}",
                regressands.len(),
                regressor.len(),
                meta.s
            ));
        }
        if regressor.iter().chain(&regressands).any(|r| r.n_state() != n || r.n_obs() != m) {
            return dim_err("training correlations of differing shapes");
        }
        Ok(Self { regressor, regressands, n_state: n, n_obs: m, meta })
    }

    pub fn samples(&self) -> usize {
        self.regressands.len()
    }

    /// Pairs `(r^K_{m,s}, r^L_m)` in sample order.
    pub fn pairs(&self) -> impl Iterator<Item = (&CrossCorrelation, &CrossCorrelation)> {
        let s = self.meta.s;
        self.regressands.iter().enumerate().map(move |(idx, rk)| (rk, &self.regressor[idx / s]))
    }

    /// Mean squared regression residual of map vector `u` for pair `(i, j)`,
    /// summed directly over the samples.
    pub fn objective(&self, i: usize, j: usize, u: &[f64]) -> f64 {
        let total: f64 = self
            .pairs()
            .map(|(rk, rl)| {
                let pred: f64 = rk.column(j).iter().zip(u).map(|(a, b)| a * b).sum();
                (pred - rl.entries[(i, j)]).powi(2)
            })
            .sum();
        total / self.samples() as f64
    }

    pub fn accumulate(&self) -> NormalEquations {
        let mut acc = NormalEquations::new(self.n_state, self.n_obs);
        let pairs: Vec<_> = self.pairs().collect();
        for chunk in pairs.chunks(BATCH) {
            acc.add_batch(chunk);
        }
        acc
    }
}

/// Builds `r^L_m` from each full archived ensemble and `S` subsampled
/// `r^K_{m,s}` per time, with subsets drawn from substream `m` of `seed`.
pub fn build_training_set(
    archive: &[Ensemble],
    op: &ObservationOperator,
    k: usize,
    s: usize,
    seed: u64,
    source: &str,
) -> Result<CorrelationTrainingSet> {
    let t = archive.len();
    if t * s <= op.n_state() {
        return Err(Error::Underdetermined { samples: t * s, unknowns: op.n_state() });
    }
    let l = archive[0].size();
    let mut regressor = Vec::with_capacity(t);
    let mut regressands = Vec::with_capacity(t * s);
    for (m, e) in archive.iter().enumerate() {
        regressor.push(ensemble_correlation(e, op)?);
        for sub in subsample(e, k, s, crate::rng::derive_indexed(seed, &[m as u64]))? {
            regressands.push(ensemble_correlation(&sub, op)?);
        }
    }
    CorrelationTrainingSet::new(regressor, regressands, TrainingMeta { k, l, t, s, seed, source: source.into() })
}

/// Streaming sufficient statistics of the per-observation regressions.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    n_state: usize,
    /// `G_j = Σ a aᵀ` with `a = r^K(·, j)`.
    gram: Vec<DenseMatrix>,
    /// `C_j[(q, i)] = Σ a_q r^L(i, j)`.
    cross: Vec<DenseMatrix>,
    /// `Σ r^L(i, j)²`, N x M.
    target_sq: DenseMatrix,
    count: usize,
}

impl NormalEquations {
    pub fn new(n_state: usize, n_obs: usize) -> Self {
        Self {
            n_state,
            gram: vec![DenseMatrix::zeros(n_state, n_state); n_obs],
            cross: vec![DenseMatrix::zeros(n_state, n_state); n_obs],
            target_sq: DenseMatrix::zeros(n_state, n_obs),
            count: 0,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.gram.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds one sample: regressand `rk` paired with regressor `rl`.
    pub fn add(&mut self, rk: &CrossCorrelation, rl: &CrossCorrelation) {
        self.add_batch(&[(rk, rl)]);
    }

    /// Adds a batch of samples with one matrix product per observation.
    pub fn add_batch(&mut self, pairs: &[(&CrossCorrelation, &CrossCorrelation)]) {
        if pairs.is_empty() {
            return;
        }
        let (n, b) = (self.n_state, pairs.len());
        let mut a = DenseMatrix::zeros(b, n);
        let mut t = DenseMatrix::zeros(b, n);
        for j in 0..self.n_obs() {
            for (row, (rk, rl)) in pairs.iter().enumerate() {
                for q in 0..n {
                    a[(row, q)] = rk.entries[(q, j)];
                    t[(row, q)] = rl.entries[(q, j)];
                }
            }
            self.gram[j].gemm_tr(1.0, &a, &a, 1.0);
            self.cross[j].gemm_tr(1.0, &a, &t, 1.0);
            for i in 0..n {
                self.target_sq[(i, j)] += t.column(i).norm_squared();
            }
        }
        self.count += b;
    }

    pub fn merge(&mut self, other: &NormalEquations) {
        for j in 0..self.n_obs() {
            self.gram[j] += &other.gram[j];
            self.cross[j] += &other.cross[j];
        }
        self.target_sq += &other.target_sq;
        self.count += other.count;
    }

    fn check_determined(&self) -> Result<()> {
        if self.count <= self.n_state {
            return Err(Error::Underdetermined { samples: self.count, unknowns: self.n_state });
        }
        Ok(())
    }

    /// Solves all `N·M` regressions; returns the map and the number of
    /// observations whose Gram matrix needed the fallback ridge.
    pub fn fit_map(&self) -> Result<(MapTensor, usize)> {
        self.check_determined()?;
        let n = self.n_state;
        let solved: Vec<Result<(Vec<Vec<f64>>, bool)>> = (0..self.n_obs())
            .into_par_iter()
            .map(|j| {
                let (chol, info) = factor_normal(&self.gram[j], 0.0)
                    .map_err(|e| Error::Regression { i: 0, j, source: Box::new(e) })?;
                let cols = (0..n)
                    .map(|i| {
                        let mut u: Vec<f64> = self.cross[j].column(i).iter().copied().collect();
                        chol.solve_in_place(&mut u);
                        u
                    })
                    .collect();
                Ok((cols, info.fallback))
            })
            .collect();
        let mut map = MapTensor::zeros(n, self.n_obs());
        let mut fallbacks = 0;
        for (j, r) in solved.into_iter().enumerate() {
            let (cols, fallback) = r?;
            fallbacks += usize::from(fallback);
            for (i, u) in cols.iter().enumerate() {
                if u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Regression {
                        i,
                        j,
                        source: Box::new(Error::Singular("non-finite coefficients".into())),
                    });
                }
                map.set_vector(i, j, u);
            }
        }
        if fallbacks > 0 {
            warn!("{fallbacks} of {} observation regressions used the fallback ridge", self.n_obs());
        }
        Ok((map, fallbacks))
    }

    /// Pointwise scalar fits `Σ r^K r^L / Σ (r^K)²`; pairs without
    /// information get weight 0.
    pub fn fit_diagonal(&self) -> Result<DiagonalMap> {
        if self.count == 0 {
            return Err(Error::Config("no training samples".into()));
        }
        let n = self.n_state;
        let mut weights = DenseMatrix::zeros(n, self.n_obs());
        let mut empty = 0;
        for j in 0..self.n_obs() {
            for i in 0..n {
                let den = self.gram[j][(i, i)];
                if den > 0.0 {
                    weights[(i, j)] = self.cross[j][(i, i)] / den;
                } else {
                    empty += 1;
                }
            }
        }
        if empty > 0 {
            warn!("{empty} state/observation pairs have zero regressand energy; their diagonal weight is 0");
        }
        Ok(DiagonalMap { weights })
    }

    /// Mean squared residual of map vector `u` for pair `(i, j)`, from the
    /// accumulated moments.
    pub fn objective(&self, i: usize, j: usize, u: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        let quad = (u.transpose() * &self.gram[j] * &u)[(0, 0)];
        let lin = u.dot(&self.cross[j].column(i));
        (quad - 2.0 * lin + self.target_sq[(i, j)]) / self.count as f64
    }
}

/// Buffers owned samples and folds them into normal equations in batches,
/// so long archives never need to be held in memory.
#[derive(Debug, Clone)]
pub struct StreamingAccumulator {
    equations: NormalEquations,
    pending: Vec<(CrossCorrelation, CrossCorrelation)>,
}

impl StreamingAccumulator {
    pub fn new(n_state: usize, n_obs: usize) -> Self {
        Self { equations: NormalEquations::new(n_state, n_obs), pending: Vec::with_capacity(BATCH) }
    }

    pub fn push(&mut self, rk: CrossCorrelation, rl: &CrossCorrelation) {
        self.pending.push((rk, rl.clone()));
        if self.pending.len() == BATCH {
            self.flush();
        }
    }

    fn flush(&mut self) {
        let pairs: Vec<_> = self.pending.iter().map(|(a, b)| (a, b)).collect();
        self.equations.add_batch(&pairs);
        self.pending.clear();
    }

    pub fn count(&self) -> usize {
        self.equations.count() + self.pending.len()
    }

    pub fn finish(mut self) -> NormalEquations {
        self.flush();
        self.equations
    }
}

/// Full localization map from an explicit training set.
pub fn fit_map(ts: &CorrelationTrainingSet) -> Result<MapTensor> {
    if ts.samples() <= ts.n_state {
        return Err(Error::Underdetermined { samples: ts.samples(), unknowns: ts.n_state });
    }
    ts.accumulate().fit_map().map(|(m, _)| m)
}

/// Diagonal localization map from an explicit training set.
pub fn fit_diagonal(ts: &CorrelationTrainingSet) -> Result<DiagonalMap> {
    ts.accumulate().fit_diagonal()
}

/// Conditions under which a GC half-width is tuned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcCase {
    pub ensemble_size: usize,
    pub inflation: f64,
}

/// Best half-width for one `(K, n, M, inflation)` case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcTuningEntry {
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub inflation: f64,
    pub half_width: f64,
    pub rmse: f64,
    pub diverged: bool,
}

/// Scores every half-width in `grid` by the time-mean analysis RMSE of a
/// serial EnKF over `window`; divergent runs score +inf, ties go to the
/// smaller half-width.
pub fn tune_gc(twin: &Twin<'_>, case: GcCase, grid: &[f64], window: Window, init_seed: u64) -> Result<GcTuningEntry> {
    if grid.is_empty() {
        return Err(Error::Config("empty half-width grid".into()));
    }
    let scores: Vec<Result<f64>> = grid
        .par_iter()
        .map(|&c| {
            let cfg = FilterConfig::new(case.ensemble_size, case.inflation, LocalizationScheme::gaspari_cohn(c)?)?;
            let series = run_serial(twin, &cfg, window, init_seed)?;
            let summary = crate::diagnostics::aggregate(&series, None)?;
            Ok(if summary.diverged { f64::INFINITY } else { summary.mean_rmse })
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for (&c, score) in grid.iter().zip(scores) {
        let score = score?;
        best = match best {
            Some((bc, bs)) if bs < score || (bs == score && bc <= c) => Some((bc, bs)),
            _ => Some((c, score)),
        };
    }
    let (c, score) = best.expect("nonempty grid");
    let smallest = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let diverged = score.is_infinite();
    Ok(GcTuningEntry {
        k: case.ensemble_size,
        n: twin.stride,
        m: twin.op.n_obs(),
        inflation: case.inflation,
        half_width: if diverged { smallest } else { c },
        rmse: score,
        diverged,
    })
}

pub fn save_tuning_table(path: &Path, entries: &[GcTuningEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in entries {
        w.serialize(e)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}

pub fn load_tuning_table(path: &Path) -> Result<Vec<GcTuningEntry>> {
    let file = std::fs::File::open(path).map_err(|e| crate::io::missing(path, e))?;
    csv::Reader::from_reader(file).deserialize().map(|r| r.map_err(Error::from)).collect()
}
