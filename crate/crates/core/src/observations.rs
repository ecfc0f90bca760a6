//! Observation operators and synthetic observation generation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::io;
use crate::model::Trajectory;
use crate::rng;

/// Half-width of the seven-point observation stencils.
const STENCIL: isize = 3;

/// Stencil coefficients of the nonlinear operator, indexed by `k + 3`.
pub const NONLINEAR_COEFFS: [f64; 7] = [1.0, 0.8, 0.4, 0.0, 0.4, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsKind {
    Direct,
    IndirectLinear,
    NonlinearIndirect,
}

impl ObsKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObsKind::Direct => "direct",
            ObsKind::IndirectLinear => "indirect_linear",
            ObsKind::NonlinearIndirect => "nonlinear_indirect",
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, ObsKind::NonlinearIndirect)
    }
}

impl std::fmt::Display for ObsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ObsKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ObsKind::Direct),
            "indirect_linear" | "indirect" => Ok(ObsKind::IndirectLinear),
            "nonlinear_indirect" | "nonlinear" => Ok(ObsKind::NonlinearIndirect),
            other => Err(Error::Config(format!("unknown observation kind '{other}'"))),
        }
    }
}

/// Data range and stencil coefficients of the nonlinear operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearObsParams {
    pub a: f64,
    pub b: f64,
    pub c: [f64; 7],
}

impl NonlinearObsParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let p = Self { a, b, c: NONLINEAR_COEFFS };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a < self.b) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::Config(format!(
                "nonlinear observation range needs a < b, got a={} b={}",
                self.a, self.b
            )));
        }
        let c = &self.c;
        let symmetric = (0..7).all(|k| c[k] == c[6 - k]);
        if !symmetric || c[0] != 1.0 || c[3] != 0.0 {
            return Err(Error::Config(format!("invalid stencil coefficients {c:?}")));
        }
        Ok(())
    }

    /// State-dependent weight of stencil offset `k` (in -3..=3) at value `v`.
    ///
    /// Inputs outside `[a, b]` are not clamped.
    pub fn weight(&self, k: isize, v: f64) -> f64 {
        let ck = self.c[(k + STENCIL) as usize];
        let mid = 0.5 * (self.a + self.b);
        0.5 * ck * (1.0 + (2.0 * PI / (self.b - self.a) * (v - mid)).cos())
    }
}

/// Maps model states to observation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationOperator {
    kind: ObsKind,
    n_obs: usize,
    n_state: usize,
    nonlinear: Option<NonlinearObsParams>,
}

impl ObservationOperator {
    pub fn new(kind: ObsKind, n_obs: usize, n_state: usize, nonlinear: Option<NonlinearObsParams>) -> Result<Self> {
        if n_obs == 0 || n_state == 0 {
            return Err(Error::Config("observation and state counts must be positive".into()));
        }
        match kind {
            ObsKind::Direct => {
                if n_state % n_obs != 0 {
                    return Err(Error::Config(format!("direct observations need N mod M = 0 (N={n_state}, M={n_obs})")));
                }
            }
            ObsKind::IndirectLinear => {
                if 2 * n_obs != n_state {
                    return Err(Error::Config(format!("indirect observations need M = N/2 (N={n_state}, M={n_obs})")));
                }
            }
            ObsKind::NonlinearIndirect => {
                if n_state % n_obs != 0 {
                    return Err(Error::Config(format!(
                        "nonlinear observations need N mod M = 0 (N={n_state}, M={n_obs})"
                    )));
                }
                match &nonlinear {
                    Some(p) => p.validate()?,
                    None => return Err(Error::Config("nonlinear observations need (a, b) parameters".into())),
                }
            }
        }
        Ok(Self { kind, n_obs, n_state, nonlinear })
    }

    pub fn direct(n_obs: usize, n_state: usize) -> Result<Self> {
        Self::new(ObsKind::Direct, n_obs, n_state, None)
    }

    pub fn indirect(n_state: usize) -> Result<Self> {
        Self::new(ObsKind::IndirectLinear, n_state / 2, n_state, None)
    }

    pub fn nonlinear(n_obs: usize, n_state: usize, params: NonlinearObsParams) -> Result<Self> {
        Self::new(ObsKind::NonlinearIndirect, n_obs, n_state, Some(params))
    }

    pub fn kind(&self) -> ObsKind {
        self.kind
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn nonlinear_params(&self) -> Option<&NonlinearObsParams> {
        self.nonlinear.as_ref()
    }

    /// Grid point observation `j` is anchored to.
    pub fn center(&self, j: usize) -> usize {
        match self.kind {
            ObsKind::Direct | ObsKind::NonlinearIndirect => j * (self.n_state / self.n_obs),
            ObsKind::IndirectLinear => (2 * j) % self.n_state,
        }
    }

    /// Observation `j` of state `x`. `x` must have `n_state` entries.
    pub fn apply_component(&self, j: usize, x: &[f64]) -> f64 {
        let n = self.n_state as isize;
        let center = self.center(j) as isize;
        let at = |k: isize| x[(center + k).rem_euclid(n) as usize];
        match self.kind {
            ObsKind::Direct => x[center as usize],
            ObsKind::IndirectLinear => (-STENCIL..=STENCIL).map(at).sum(),
            ObsKind::NonlinearIndirect => {
                let p = self.nonlinear.as_ref().expect("validated at construction");
                (-STENCIL..=STENCIL)
                    .map(|k| {
                        let v = at(k);
                        p.weight(k, v) * v
                    })
                    .sum()
            }
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.apply_component(j, x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_state {
            return dim_err(format!("state has {} entries, operator expects {}", x.len(), self.n_state));
        }
        let mut out = vec![0.0; self.n_obs];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Matrix of a linear operator (`None` for the nonlinear one).
    pub fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        if !self.kind.is_linear() {
            return None;
        }
        let mut h = DMatrix::zeros(self.n_obs, self.n_state);
        let mut e = vec![0.0; self.n_state];
        for q in 0..self.n_state {
            e[q] = 1.0;
            for j in 0..self.n_obs {
                h[(j, q)] = self.apply_component(j, &e);
            }
            e[q] = 0.0;
        }
        Some(h)
    }
}

/// Observations of one assimilation cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    /// Cycle index `m`; the observed truth is at model step `m * stride`.
    pub time_index: usize,
    pub values: Vec<f64>,
}

/// Draws `y = h(x_m) + noise_std * eps` at every `stride`-th model step
/// (`m = 1, 2, ...`). A `noise_std` of zero yields noise-free records.
pub fn generate_observations_with_noise(
    truth: &Trajectory,
    op: &ObservationOperator,
    stride: usize,
    seed: u64,
    noise_std: f64,
) -> Result<Vec<ObservationRecord>> {
    if stride == 0 {
        return Err(Error::Config("observation stride must be >= 1".into()));
    }
    if truth.n_state() != op.n_state() {
        return dim_err("trajectory and operator disagree on n_state");
    }
    let n_records = (truth.len() - 1) / stride;
    if n_records == 0 {
        return Err(Error::Config(format!(
            "trajectory of {} states is too short for stride {stride}",
            truth.len()
        )));
    }
    let mut rng = rng::rng_from(rng::derive_seed(seed, "observation-noise"));
    let mut out = Vec::with_capacity(n_records);
    for m in 1..=n_records {
        let mut values = op.apply(truth.state(m * stride))?;
        for v in values.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v += noise_std * eps;
        }
        out.push(ObservationRecord { time_index: m, values });
    }
    Ok(out)
}

/// Unit-variance Gaussian observations of the truth at every `stride`-th step.
pub fn generate_observations(
    truth: &Trajectory,
    op: &ObservationOperator,
    stride: usize,
    seed: u64,
) -> Result<Vec<ObservationRecord>> {
    generate_observations_with_noise(truth, op, stride, seed, 1.0)
}

/// Global minimum and maximum over every component of every state.
pub fn compute_extrema(truth: &Trajectory) -> Result<(f64, f64)> {
    if truth.is_empty() {
        return Err(Error::Config("empty trajectory".into()));
    }
    Ok(truth
        .as_rows()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
}

/// JSON sidecar describing an observation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationHeader {
    pub kind: ObsKind,
    #[serde(rename = "M")]
    pub n_obs: usize,
    pub n: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b: Option<f64>,
}

/// Writes records as CSV (`time_index, y_0, ..., y_{M-1}`) plus a JSON sidecar.
pub fn save_observations(path: &Path, records: &[ObservationRecord], header: &ObservationHeader) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["time_index".to_string()];
    head.extend((0..header.n_obs).map(|j| format!("y_{j}")));
    w.write_record(&head)?;
    for r in records {
        if r.values.len() != header.n_obs {
            return dim_err("record length differs from header M");
        }
        let mut row = vec![r.time_index.to_string()];
        row.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    io::write_atomic(path, &bytes)?;
    io::write_json(&io::sidecar_path(path), header)
}

pub fn load_observations(path: &Path) -> Result<(Vec<ObservationRecord>, ObservationHeader)> {
    let header: ObservationHeader = io::read_json(&io::sidecar_path(path))?;
    let file = std::fs::File::open(path).map_err(|e| io::missing(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != header.n_obs + 1 {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("row has {} columns, expected {}", row.len(), header.n_obs + 1),
            });
        }
        let bad = |e: String| Error::Malformed { path: path.to_path_buf(), reason: e };
        let time_index = row[0].parse::<usize>().map_err(|e| bad(e.to_string()))?;
        let values = row
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        out.push(ObservationRecord { time_index, values });
    }
    Ok((out, header))
}
