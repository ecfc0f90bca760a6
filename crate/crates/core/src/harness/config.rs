//! Experiment configuration: the JSON schema read by the CLI, presets and
//! the content hash that names a run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::study::{ObsSetup, Regressor};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, DEFAULT_SPINUP_STEPS};
use crate::observations::ObsKind;

/// Localization scheme families a verification sweep can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    None,
    Gc,
    Map,
    Diagonal,
}

impl SchemeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Gc => "gc",
            Self::Map => "map",
            Self::Diagonal => "diagonal",
        }
    }
}

fn default_spinup_steps() -> usize {
    DEFAULT_SPINUP_STEPS
}

fn default_filter_spinup() -> usize {
    500
}

fn default_inflation_grid() -> Vec<f64> {
    vec![0.0, 0.02, 0.05, 0.08, 0.1, 0.15, 0.2, 0.3]
}

fn default_half_width_grid() -> Vec<f64> {
    (1..=10).map(f64::from).collect()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    /// Model steps discarded before the nature run is recorded.
    #[serde(default = "default_spinup_steps")]
    pub spinup_steps: usize,
    pub setups: Vec<ObsSetup>,
    pub ensemble_sizes: Vec<usize>,
    #[serde(default = "default_inflation_grid")]
    pub inflation_grid: Vec<f64>,
    #[serde(default = "default_half_width_grid")]
    pub half_width_grid: Vec<f64>,
    pub schemes: Vec<SchemeKind>,
    pub regressor: Regressor,
    /// Members of the ETKF benchmark run over the verification window.
    pub benchmark_members: usize,
    pub t_train: usize,
    pub t_verify: usize,
    /// Subsample counts; one map per value.
    pub s_values: Vec<usize>,
    /// Cycles at the start of every filter run excluded from time means
    /// and from the training archive.
    #[serde(default = "default_filter_spinup")]
    pub filter_spinup: usize,
    pub master_seed: u64,
    /// Persist the regressor correlation archive of every setup.
    #[serde(default)]
    pub write_archives: bool,
    #[serde(default = "default_out_dir", skip_serializing)]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Full-scale configuration: 30 000 cycles, ETKF with 500 members, all
    /// thirteen observation setups.
    pub fn full_scale() -> Self {
        let mut setups = Vec::new();
        for m in [10, 20, 40] {
            for n in [1, 5, 10] {
                setups.push(ObsSetup::new(ObsKind::Direct, m, n));
            }
        }
        for n in [1, 5, 10] {
            setups.push(ObsSetup::new(ObsKind::IndirectLinear, 20, n));
        }
        setups.push(ObsSetup::new(ObsKind::NonlinearIndirect, 10, 5));
        Self {
            model: ModelConfig::lorenz96(),
            spinup_steps: DEFAULT_SPINUP_STEPS,
            setups,
            ensemble_sizes: vec![5, 10, 20, 40],
            inflation_grid: default_inflation_grid(),
            half_width_grid: default_half_width_grid(),
            schemes: vec![SchemeKind::Map, SchemeKind::Diagonal, SchemeKind::Gc],
            regressor: Regressor::Etkf { members: 500 },
            benchmark_members: 500,
            t_train: 10_000,
            t_verify: 20_000,
            s_values: vec![1],
            filter_spinup: default_filter_spinup(),
            master_seed: 0,
            write_archives: false,
            out_dir: default_out_dir(),
        }
    }

    /// Reduced profile: 200-member ETKF and 9 000 cycles split 1:2.
    pub fn ci() -> Self {
        Self {
            setups: vec![
                ObsSetup::new(ObsKind::Direct, 10, 1),
                ObsSetup::new(ObsKind::IndirectLinear, 20, 1),
                ObsSetup::new(ObsKind::NonlinearIndirect, 10, 5),
            ],
            ensemble_sizes: vec![5, 40],
            regressor: Regressor::Etkf { members: 200 },
            benchmark_members: 200,
            t_train: 3_000,
            t_verify: 6_000,
            ..Self::full_scale()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::io::missing(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.setups.is_empty() || self.ensemble_sizes.is_empty() || self.inflation_grid.is_empty() {
            return bad("setups, ensemble_sizes and inflation_grid must be nonempty".into());
        }
        if self.schemes.is_empty() || self.s_values.is_empty() {
            return bad("schemes and s_values must be nonempty".into());
        }
        if self.schemes.contains(&SchemeKind::Gc) && self.half_width_grid.is_empty() {
            return bad("GC verification needs a nonempty half_width_grid".into());
        }
        if self.half_width_grid.iter().any(|&c| !(c > 0.0)) {
            return bad("half-widths must be positive".into());
        }
        if self.inflation_grid.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
            return bad("inflation factors must be finite and nonnegative".into());
        }
        let l = self.regressor.members();
        if let Some(&k) = self.ensemble_sizes.iter().find(|&&k| k < 2 || k > l) {
            return bad(format!("ensemble size {k} outside [2, {l}]"));
        }
        if self.benchmark_members < 2 {
            return bad("benchmark needs at least 2 members".into());
        }
        if self.filter_spinup >= self.t_train || self.filter_spinup >= self.t_verify {
            return bad(format!(
                "filter_spinup {} must be shorter than both windows ({}, {})",
                self.filter_spinup, self.t_train, self.t_verify
            ));
        }
        let archived = self.t_train - self.filter_spinup;
        if let Some(&s) = self.s_values.iter().find(|&&s| s == 0 || archived * s <= self.model.n_state) {
            return bad(format!(
                "T*S = {archived}*{s} must exceed N = {} for a determined regression",
                self.model.n_state
            ));
        }
        for setup in &self.setups {
            if setup.stride == 0 || setup.n_obs == 0 {
                return bad(format!("setup {} needs M >= 1 and n >= 1", setup.label()));
            }
            super::study::build_operator_shape(setup, self.model.n_state)?;
        }
        let mut labels: Vec<_> = self.setups.iter().map(|s| s.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.setups.len() {
            return bad("duplicate observation setups".into());
        }
        Ok(())
    }

    /// Observation cycles per setup.
    pub fn n_cycles(&self) -> usize {
        self.t_train + self.t_verify
    }

    pub fn max_stride(&self) -> usize {
        self.setups.iter().map(|s| s.stride).max().unwrap_or(1)
    }

    /// SHA-256 of the canonical JSON form (output location excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join("runs").join(self.hash())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::full_scale().validate().unwrap();
        ExperimentConfig::ci().validate().unwrap();
    }

    #[test]
    fn full_scale_preset_collects_thirty_thousand_records() {
        assert_eq!(ExperimentConfig::full_scale().n_cycles(), 30_000);
    }

    #[test]
    fn hash_ignores_output_location_but_not_seed() {
        let a = ExperimentConfig::ci();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.master_seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = ExperimentConfig::ci();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let minimal = r#"{"setups":[{"kind":"direct","M":10,"n":1}],"ensemble_sizes":[5],"schemes":["map"],
            "regressor":{"etkf":{"members":50}},"benchmark_members":50,"t_train":600,"t_verify":600,
            "s_values":[1],"master_seed":3}"#;
        let m: ExperimentConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(m.inflation_grid.len(), 8);
        assert_eq!(m.half_width_grid, (1..=10).map(f64::from).collect::<Vec<_>>());
        m.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::ci();
        c.s_values = vec![0];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::ci();
        c.ensemble_sizes = vec![500];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::ci();
        c.setups.push(ObsSetup::new(ObsKind::IndirectLinear, 10, 1));
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::ci();
        c.t_train = 520;
        assert!(c.validate().is_err());
    }
}
