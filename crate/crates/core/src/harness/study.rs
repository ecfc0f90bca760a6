//! One observation setup end to end, in memory: truth and observations,
//! map training from a reference filter, GC tuning and verification runs.

use serde::{Deserialize, Serialize};

use crate::cycling::{run_etkf, run_serial, Twin, Window};
use crate::diagnostics::{aggregate, DiagnosticsSeries, Summary};
use crate::error::{Error, Result};
use crate::filters::FilterConfig;
use crate::localization::{DiagonalMap, LocalizationScheme, MapTensor};
use crate::model::{nature_run, ModelConfig, Trajectory};
use crate::observations::{
    compute_extrema, generate_observations, NonlinearObsParams, ObsKind, ObservationOperator, ObservationRecord,
};
use crate::rng::{derive_indexed, derive_seed};
use crate::stats::{ensemble_correlation, subsample, CrossCorrelation, Ensemble};
use crate::training::{tune_gc, GcCase, GcTuningEntry, NormalEquations, StreamingAccumulator};

/// Observation network: operator kind, count and stride in model steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObsSetup {
    pub kind: ObsKind,
    #[serde(rename = "M")]
    pub n_obs: usize,
    #[serde(rename = "n")]
    pub stride: usize,
}

impl ObsSetup {
    pub fn new(kind: ObsKind, n_obs: usize, stride: usize) -> Self {
        Self { kind, n_obs, stride }
    }

    /// File-name friendly identifier, e.g. `direct-M40-n1`.
    pub fn label(&self) -> String {
        format!("{}-M{}-n{}", self.kind.as_str(), self.n_obs, self.stride)
    }
}

/// Filter that produces the regressor correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    /// Large ETKF without localization or inflation.
    Etkf { members: usize },
    /// Serial EnKF with GC localization; `half_width` is tuned when absent.
    SerialGc { members: usize, half_width: Option<f64>, inflation: f64 },
}

impl Regressor {
    pub fn members(&self) -> usize {
        match self {
            Self::Etkf { members } | Self::SerialGc { members, .. } => *members,
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::Etkf { members } => format!("etkf-L{members}"),
            Self::SerialGc { members, .. } => format!("serial-gc-L{members}"),
        }
    }
}

/// Truth, operator and observation records of one setup.
#[derive(Debug, Clone)]
pub struct SetupData {
    pub model: ModelConfig,
    pub setup: ObsSetup,
    pub truth: Trajectory,
    pub op: ObservationOperator,
    pub records: Vec<ObservationRecord>,
}

impl SetupData {
    pub fn twin(&self) -> Twin<'_> {
        Twin { model: &self.model, truth: &self.truth, records: &self.records, op: &self.op, stride: self.setup.stride }
    }
}

/// Seed of the nature run shared by all setups; runs of different length
/// from the same seed share their common prefix.
pub fn nature_seed(master_seed: u64) -> u64 {
    derive_seed(master_seed, "nature")
}

pub fn observation_seed(master_seed: u64, setup: &ObsSetup) -> u64 {
    derive_seed(master_seed, &format!("observations/{}", setup.label()))
}

/// Operator for `setup`; nonlinear weights take their range from `truth`.
pub fn build_operator(setup: &ObsSetup, n_state: usize, truth: Option<&Trajectory>) -> Result<ObservationOperator> {
    match setup.kind {
        ObsKind::Direct => ObservationOperator::direct(setup.n_obs, n_state),
        ObsKind::IndirectLinear => {
            let op = ObservationOperator::indirect(n_state)?;
            if op.n_obs() != setup.n_obs {
                return Err(Error::Config(format!(
                    "indirect observations need M = N/2 = {}, got {}",
                    op.n_obs(),
                    setup.n_obs
                )));
            }
            Ok(op)
        }
        ObsKind::NonlinearIndirect => {
            let truth = truth.ok_or_else(|| Error::Config("nonlinear observations need the truth extrema".into()))?;
            let (a, b) = compute_extrema(truth)?;
            ObservationOperator::nonlinear(setup.n_obs, n_state, NonlinearObsParams::new(a, b)?)
        }
    }
}

/// Checks that `setup` describes a valid operator on `n_state` variables.
pub fn build_operator_shape(setup: &ObsSetup, n_state: usize) -> Result<()> {
    if setup.kind == ObsKind::NonlinearIndirect {
        ObservationOperator::nonlinear(setup.n_obs, n_state, NonlinearObsParams::new(-1.0, 1.0)?)?;
        return Ok(());
    }
    build_operator(setup, n_state, None).map(|_| ())
}

/// Nature run long enough for `n_cycles` observation times, and the records.
pub fn simulate_setup(
    model: &ModelConfig,
    setup: ObsSetup,
    master_seed: u64,
    spinup_steps: usize,
    n_cycles: usize,
) -> Result<SetupData> {
    let truth = nature_run(model, nature_seed(master_seed), spinup_steps, n_cycles * setup.stride)?;
    observe_setup(model, setup, truth, master_seed)
}

pub fn observe_setup(model: &ModelConfig, setup: ObsSetup, truth: Trajectory, master_seed: u64) -> Result<SetupData> {
    let op = build_operator(&setup, model.n_state, Some(&truth))?;
    let records = generate_observations(&truth, &op, setup.stride, observation_seed(master_seed, &setup))?;
    Ok(SetupData { model: model.clone(), setup, truth, op, records })
}

/// Subsample size and count for one learned map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapRequest {
    pub k: usize,
    pub s: usize,
}

/// A fitted map pair and the normal equations it came from.
#[derive(Debug, Clone)]
pub struct TrainedMaps {
    pub request: MapRequest,
    pub map: MapTensor,
    pub diagonal: DiagonalMap,
    pub equations: NormalEquations,
    pub fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub maps: Vec<TrainedMaps>,
    /// Number of archived regressor ensembles (T).
    pub archived: usize,
    pub regressor_summary: Summary,
    pub regressor_half_width: Option<f64>,
    /// Regressor correlations `r^L_m`, when requested.
    pub archive: Option<Vec<CrossCorrelation>>,
}

/// Seed of the initial ensemble for a run of `members` members; shared by
/// every scheme and inflation so cells differ only in the filter.
pub fn init_seed(master_seed: u64, setup: &ObsSetup, phase: &str, members: usize) -> u64 {
    derive_seed(master_seed, &format!("init/{phase}/{}/K{members}", setup.label()))
}

/// Runs the regressor over `window`, archiving every analysis after the
/// spin-up, and fits one map pair per request from streamed statistics.
/// With `keep_archive` the regressor correlations are returned as well.
pub fn train_maps(
    data: &SetupData,
    regressor: &Regressor,
    window: Window,
    requests: &[MapRequest],
    half_width_grid: &[f64],
    master_seed: u64,
    keep_archive: bool,
) -> Result<TrainingOutcome> {
    let twin = data.twin();
    let (n, m) = (data.model.n_state, data.op.n_obs());
    let members = regressor.members();
    for r in requests {
        if r.k < 2 || r.k > members || r.s == 0 {
            return Err(Error::Config(format!("cannot draw S={} subsets of K={} from L={members}", r.s, r.k)));
        }
    }
    let archived = window.count.saturating_sub(window.spinup);
    if let Some(r) = requests.iter().find(|r| archived * r.s <= n) {
        return Err(Error::Underdetermined { samples: archived * r.s, unknowns: n });
    }
    let mut accs: Vec<StreamingAccumulator> = requests.iter().map(|_| StreamingAccumulator::new(n, m)).collect();
    let sub_seed = derive_seed(master_seed, &format!("subsample/{}", data.setup.label()));
    let first_archived = window.start + window.spinup + 1;
    let mut archive = keep_archive.then(Vec::new);
    let mut observer = |cycle: usize, e: &Ensemble| -> Result<()> {
        if cycle < first_archived {
            return Ok(());
        }
        let rl = ensemble_correlation(e, &data.op)?;
        for (req, acc) in requests.iter().zip(accs.iter_mut()) {
            let seed = derive_indexed(sub_seed, &[req.k as u64, req.s as u64, cycle as u64]);
            for sub in subsample(e, req.k, req.s, seed)? {
                acc.push(ensemble_correlation(&sub, &data.op)?, &rl);
            }
        }
        if let Some(a) = archive.as_mut() {
            a.push(rl);
        }
        Ok(())
    };
    let seed = init_seed(master_seed, &data.setup, "train", members);
    let (series, half_width) = match regressor {
        Regressor::Etkf { members } => (run_etkf(&twin, *members, 0.0, window, seed, &mut observer)?, None),
        Regressor::SerialGc { members, half_width, inflation } => {
            let c = match half_width {
                Some(c) => *c,
                None => {
                    let case = GcCase { ensemble_size: *members, inflation: *inflation };
                    tune_gc(&twin, case, half_width_grid, window, seed)?.half_width
                }
            };
            let cfg = FilterConfig::new(*members, *inflation, LocalizationScheme::gaspari_cohn(c)?)?;
            let series = crate::cycling::run_serial_observed(&twin, &cfg, window, seed, &mut observer)?;
            (series, Some(c))
        }
    };
    let summary = aggregate(&series, None)?;
    if summary.diverged {
        return Err(Error::Divergence(format!(
            "regressor {} diverged on {}",
            regressor.id(),
            data.setup.label()
        )));
    }
    if summary.at_climatology {
        log::warn!(
            "regressor {} on {} has no skill (RMSE {:.3}); the maps will be poor",
            regressor.id(),
            data.setup.label(),
            summary.mean_rmse
        );
    }
    let maps = requests
        .iter()
        .zip(accs)
        .map(|(req, acc)| {
            let equations = acc.finish();
            let (map, fallbacks) = equations.fit_map()?;
            let diagonal = equations.fit_diagonal()?;
            Ok(TrainedMaps { request: *req, map, diagonal, equations, fallbacks })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingOutcome { maps, archived, regressor_summary: summary, regressor_half_width: half_width, archive })
}

/// GC half-width tuned over the training window for one `(K, inflation)` case.
pub fn tune_setup(
    data: &SetupData,
    k: usize,
    inflation: f64,
    grid: &[f64],
    window: Window,
    master_seed: u64,
) -> Result<GcTuningEntry> {
    let case = GcCase { ensemble_size: k, inflation };
    tune_gc(&data.twin(), case, grid, window, init_seed(master_seed, &data.setup, "train", k))
}

/// Serial EnKF over the verification window.
pub fn verify_serial(data: &SetupData, cfg: &FilterConfig, window: Window, master_seed: u64) -> Result<DiagnosticsSeries> {
    run_serial(&data.twin(), cfg, window, init_seed(master_seed, &data.setup, "verify", cfg.ensemble_size))
}

/// Large-ensemble ETKF benchmark over the verification window.
pub fn verify_benchmark(data: &SetupData, members: usize, window: Window, master_seed: u64) -> Result<DiagnosticsSeries> {
    let seed = init_seed(master_seed, &data.setup, "verify", members);
    run_etkf(&data.twin(), members, 0.0, window, seed, |_, _| Ok(()))
}
