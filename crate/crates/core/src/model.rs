//! Lorenz-96 dynamics on a periodic grid, integrated with classical RK4.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::io;
use crate::rng;

/// Magnitude beyond which a state counts as blown up.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

/// Default number of discarded steps before a nature run is recorded.
pub const DEFAULT_SPINUP_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_state: usize,
    pub forcing: f64,
    pub dt: f64,
}

impl ModelConfig {
    pub fn new(n_state: usize, forcing: f64, dt: f64) -> Result<Self> {
        let cfg = Self { n_state, forcing, dt };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The 40-variable, `F = 8`, `dt = 0.05` chaotic configuration.
    pub fn lorenz96() -> Self {
        Self { n_state: 40, forcing: 8.0, dt: 0.05 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_state < 4 {
            return Err(Error::Config(format!("n_state must be >= 4, got {}", self.n_state)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.forcing.is_finite() {
            return Err(Error::Config("forcing must be finite".into()));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::lorenz96()
    }
}

/// A model state on the periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn unit(n: usize, index: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index % n] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Periodic access: `get(j)` for any integer `j` reads index `j mod N`.
    pub fn get(&self, j: isize) -> f64 {
        let n = self.0.len() as isize;
        self.0[j.rem_euclid(n) as usize]
    }

    /// Cyclic shift by `s`: result[j] = self[j - s].
    pub fn shifted(&self, s: isize) -> Self {
        let n = self.0.len() as isize;
        Self((0..n).map(|j| self.get(j - s)).collect())
    }
}

impl std::ops::Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

pub fn is_blown_up(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD)
}

/// Writes the Lorenz-96 right-hand side of `x` into `out`.
pub fn tendency_into(x: &[f64], forcing: f64, out: &mut [f64]) {
    let n = x.len();
    for j in 0..n {
        let jp1 = if j + 1 == n { 0 } else { j + 1 };
        let jm1 = if j == 0 { n - 1 } else { j - 1 };
        let jm2 = (j + n - 2) % n;
        out[j] = (x[jp1] - x[jm2]) * x[jm1] - x[j] + forcing;
    }
}

pub fn tendency(state: &StateVector, config: &ModelConfig) -> Result<StateVector> {
    if state.len() != config.n_state {
        return dim_err(format!("state has {} entries, model expects {}", state.len(), config.n_state));
    }
    let mut out = vec![0.0; state.len()];
    tendency_into(state, config.forcing, &mut out);
    Ok(StateVector(out))
}

/// Reusable RK4 stepper holding its stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    config: ModelConfig,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(config: ModelConfig) -> Self {
        let n = config.n_state;
        Self {
            config,
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Advances `x` by one step. Returns `false` when the new state is blown up.
    pub fn step(&mut self, x: &mut [f64]) -> bool {
        let f = self.config.forcing;
        let dt = self.config.dt;
        let n = x.len();
        tendency_into(x, f, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k1[i];
        }
        tendency_into(&self.tmp, f, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k2[i];
        }
        tendency_into(&self.tmp, f, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        tendency_into(&self.tmp, f, &mut self.k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        !is_blown_up(x)
    }

    /// Advances `x` by `n_steps` steps, stopping early on blow-up.
    pub fn advance(&mut self, x: &mut [f64], n_steps: usize) -> bool {
        for _ in 0..n_steps {
            if !self.step(x) {
                return false;
            }
        }
        true
    }
}

/// Result of a single RK4 step.
#[derive(Debug, Clone, PartialEq)]
pub struct Rk4Step {
    pub state: StateVector,
    pub blown_up: bool,
}

pub fn rk4_step(state: &StateVector, config: &ModelConfig) -> Result<Rk4Step> {
    if state.len() != config.n_state {
        return dim_err(format!("state has {} entries, model expects {}", state.len(), config.n_state));
    }
    let mut x = state.0.clone();
    let ok = Rk4::new(*config).step(&mut x);
    Ok(Rk4Step { state: StateVector(x), blown_up: !ok })
}

/// A uniformly spaced time series of states, stored row-major (time x state).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n_state: usize,
    dt: f64,
    start_time: f64,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn from_states(states: &[StateVector], dt: f64, start_time: f64) -> Result<Self> {
        let n_state = states.first().map(|s| s.len()).unwrap_or(0);
        if states.is_empty() || n_state == 0 {
            return dim_err("a trajectory needs at least one non-empty state");
        }
        let mut data = Vec::with_capacity(states.len() * n_state);
        for s in states {
            if s.len() != n_state {
                return dim_err("states of differing lengths");
            }
            data.extend_from_slice(s);
        }
        Ok(Self { n_state, dt, start_time, data })
    }

    pub fn from_rows(n_state: usize, dt: f64, start_time: f64, data: Vec<f64>) -> Result<Self> {
        if n_state == 0 || data.is_empty() || data.len() % n_state != 0 {
            return dim_err(format!("{} values do not tile rows of {}", data.len(), n_state));
        }
        Ok(Self { n_state, dt, start_time, data })
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    /// Number of stored states (`n_steps + 1`).
    pub fn len(&self) -> usize {
        self.data.len() / self.n_state
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, m: usize) -> &[f64] {
        &self.data[m * self.n_state..(m + 1) * self.n_state]
    }

    /// The first `len` states.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return dim_err(format!("prefix of {len} states from a trajectory of {}", self.len()));
        }
        Ok(Self { data: self.data[..len * self.n_state].to_vec(), ..*self })
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_state)
    }

    pub fn as_rows(&self) -> &[f64] {
        &self.data
    }

    pub fn time(&self, m: usize) -> f64 {
        self.start_time + m as f64 * self.dt
    }

    pub fn save(&self, payload: &Path, header: &TrajectoryHeader) -> Result<()> {
        io::write_atomic(payload, &io::encode_f64(&self.data))?;
        io::write_json(&io::sidecar_path(payload), header)
    }

    pub fn load(payload: &Path) -> Result<(Self, TrajectoryHeader)> {
        let header: TrajectoryHeader = io::read_json(&io::sidecar_path(payload))?;
        let data = io::read_payload(payload, (header.n_steps + 1) * header.n_state)?;
        let traj = Self::from_rows(header.n_state, header.dt, 0.0, data)?;
        Ok((traj, header))
    }
}

/// JSON sidecar for a persisted trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub n_state: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub forcing: f64,
}

impl TrajectoryHeader {
    pub fn for_run(config: &ModelConfig, n_steps: usize, seed: u64) -> Self {
        Self {
            n_state: config.n_state,
            dt: config.dt,
            n_steps,
            seed,
            forcing: config.forcing,
        }
    }
}

/// Integrates a truth trajectory from a standard-normal initial state.
///
/// The first `spinup_steps` steps are discarded; the returned trajectory holds
/// `n_steps + 1` states.
pub fn nature_run(config: &ModelConfig, seed: u64, spinup_steps: usize, n_steps: usize) -> Result<Trajectory> {
    config.validate()?;
    let mut rng = rng::rng_from(rng::derive_seed(seed, "nature-initial-condition"));
    let mut x: Vec<f64> = (0..config.n_state).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut rk = Rk4::new(*config);
    for step in 0..spinup_steps {
        if !rk.step(&mut x) {
            return Err(Error::Divergence(format!("nature run blew up during spin-up step {step}")));
        }
    }
    let mut data = Vec::with_capacity((n_steps + 1) * config.n_state);
    data.extend_from_slice(&x);
    for step in 0..n_steps {
        if !rk.step(&mut x) {
            return Err(Error::Divergence(format!("nature run blew up at step {}", step + 1)));
        }
        data.extend_from_slice(&x);
    }
    Trajectory::from_rows(config.n_state, config.dt, spinup_steps as f64 * config.dt, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l96() -> ModelConfig {
        ModelConfig::lorenz96()
    }

    #[test]
    fn tendency_of_zero_state_is_forcing() {
        let t = tendency(&StateVector::constant(40, 0.0), &l96()).unwrap();
        assert!(t.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn constant_forcing_state_is_a_fixed_point() {
        let t = tendency(&StateVector::constant(40, 8.0), &l96()).unwrap();
        assert!(t.iter().all(|&v| v == 0.0));
        let s = rk4_step(&StateVector::constant(40, 8.0), &l96()).unwrap();
        assert_eq!(s.state, StateVector::constant(40, 8.0));
        assert!(!s.blown_up);
    }

    #[test]
    fn tendency_of_unit_vector() {
        // Component j reads x_{j+1}, x_{j-2}, x_{j-1}, x_j. With x = e_0 only
        // the -x_0 term is nonzero for j=0; products vanish elsewhere.
        let t = tendency(&StateVector::unit(40, 0), &l96()).unwrap();
        assert_eq!(t[0], 7.0);
        assert!(t[1..].iter().all(|&v| v == 8.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(tendency(&StateVector::constant(39, 0.0), &l96()).is_err());
        assert!(rk4_step(&StateVector::constant(41, 0.0), &l96()).is_err());
        assert!(ModelConfig::new(3, 8.0, 0.05).is_err());
        assert!(ModelConfig::new(40, 8.0, 0.0).is_err());
    }

    #[test]
    fn non_finite_step_is_flagged_not_panicking() {
        let mut x = StateVector::constant(40, 1.0);
        x.as_mut_slice()[3] = f64::NAN;
        let s = rk4_step(&x, &l96()).unwrap();
        assert!(s.blown_up);
        let big = StateVector::constant(40, 2e6);
        assert!(rk4_step(&big, &l96()).unwrap().blown_up);
    }

    #[test]
    fn nature_run_degenerate_and_deterministic() {
        let t = nature_run(&l96(), 11, 0, 0).unwrap();
        assert_eq!(t.len(), 1);
        let a = nature_run(&l96(), 5, 100, 50).unwrap();
        let b = nature_run(&l96(), 5, 100, 50).unwrap();
        assert_eq!(a.len(), 51);
        assert!(a.as_rows().iter().zip(b.as_rows()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = nature_run(&l96(), 6, 100, 50).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn trajectory_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.bin");
        let t = nature_run(&l96(), 2, 10, 20).unwrap();
        t.save(&path, &TrajectoryHeader::for_run(&l96(), 20, 2)).unwrap();
        let (back, header) = Trajectory::load(&path).unwrap();
        assert_eq!(header.n_steps, 20);
        assert_eq!(back.as_rows(), t.as_rows());
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 21 * 40 * 8);
        assert_eq!(f64::from_le_bytes(bytes[..8].try_into().unwrap()), t.state(0)[0]);
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(Trajectory::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn tendency_commutes_with_cyclic_shift(
            values in proptest::collection::vec(-10.0f64..10.0, 40),
            shift in -45isize..45,
        ) {
            let x = StateVector::new(values);
            let lhs = tendency(&x.shifted(shift), &l96()).unwrap();
            let rhs = tendency(&x, &l96()).unwrap().shifted(shift);
            for (a, b) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
