//! Forecast/analysis cycling of an ensemble against a truth run and its
//! observation records.

use rand_distr::{Distribution, StandardNormal};

use crate::diagnostics::{rmse, spread, DiagnosticsSeries};
use crate::error::{Error, Result};
use crate::filters::{etkf_analysis, forecast_in_place, FilterConfig, SerialEnkf};
use crate::localization::LocalizationScheme;
use crate::model::{is_blown_up, ModelConfig, Trajectory};
use crate::numerics::DenseMatrix;
use crate::observations::{ObservationOperator, ObservationRecord};
use crate::rng;
use crate::stats::Ensemble;

/// Truth, observations and model shared by every run over one observation setup.
#[derive(Debug, Clone, Copy)]
pub struct Twin<'a> {
    pub model: &'a ModelConfig,
    pub truth: &'a Trajectory,
    pub records: &'a [ObservationRecord],
    pub op: &'a ObservationOperator,
    /// Model steps between observation times.
    pub stride: usize,
}

impl<'a> Twin<'a> {
    /// Truth at observation cycle `m` (cycle 0 is the initial time).
    pub fn truth_at(&self, m: usize) -> &'a [f64] {
        self.truth.state(m * self.stride)
    }

    pub fn observations_at(&self, m: usize) -> &'a [f64] {
        let rec = &self.records[m - 1];
        debug_assert_eq!(rec.time_index, m);
        &rec.values
    }

    pub fn n_cycles(&self) -> usize {
        self.records.len()
    }

    fn check_window(&self, w: &Window) -> Result<()> {
        let end = w.start + w.count;
        if w.count == 0 || end > self.records.len() || end * self.stride >= self.truth.len() {
            return Err(Error::Config(format!(
                "window of {} cycles from {} exceeds {} observation records",
                w.count,
                w.start,
                self.records.len()
            )));
        }
        Ok(())
    }
}

/// Cycles `start+1 ..= start+count`; the first `spinup` are excluded from time means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub count: usize,
    pub spinup: usize,
}

/// Truth plus independent standard-normal perturbations per member.
pub fn perturbed_ensemble(center: &[f64], size: usize, seed: u64) -> Result<Ensemble> {
    let mut r = rng::rng_from(seed);
    Ensemble::new(DenseMatrix::from_fn(center.len(), size, |i, _| {
        let eps: f64 = StandardNormal.sample(&mut r);
        center[i] + eps
    }))
}

/// Runs the cycles of `window`, calling `analysis` at each
/// observation time and `observer` with every analysis ensemble.
///
/// Failures inside the loop end the run and are recorded as divergence;
/// the remaining cycles are filled with NaN.
pub fn run_cycles<A, O>(
    twin: &Twin<'_>,
    mut ensemble: Ensemble,
    window: Window,
    mut analysis: A,
    mut observer: O,
) -> Result<DiagnosticsSeries>
where
    A: FnMut(&mut Ensemble, &[f64]) -> Result<()>,
    O: FnMut(usize, &Ensemble) -> Result<()>,
{
    twin.check_window(&window)?;
    let Window { start, count, spinup } = window;
    let mut series = DiagnosticsSeries { window: (spinup.min(count - 1), count), ..Default::default() };
    for m in start + 1..=start + count {
        let ok = forecast_in_place(&mut ensemble, twin.model, twin.stride)
            && match analysis(&mut ensemble, twin.observations_at(m)) {
                Ok(()) => !is_blown_up(ensemble.members().as_slice()),
                Err(e) if e.is_numerical() => false,
                Err(e) => return Err(e),
            };
        if !ok {
            series.diverged = true;
            while series.len() < count {
                series.push(f64::NAN, f64::NAN);
            }
            break;
        }
        let mean = ensemble.mean();
        series.push(rmse(&mean, twin.truth_at(m))?, spread(&ensemble)?);
        observer(m, &ensemble)?;
    }
    Ok(series)
}

/// Serial EnKF run from a perturbed truth at the window start.
pub fn run_serial(twin: &Twin<'_>, cfg: &FilterConfig, window: Window, init_seed: u64) -> Result<DiagnosticsSeries> {
    run_serial_observed(twin, cfg, window, init_seed, |_, _| Ok(()))
}

pub fn run_serial_observed<O>(
    twin: &Twin<'_>,
    cfg: &FilterConfig,
    window: Window,
    init_seed: u64,
    observer: O,
) -> Result<DiagnosticsSeries>
where
    O: FnMut(usize, &Ensemble) -> Result<()>,
{
    let mut filter = SerialEnkf::new(twin.op.clone(), cfg.clone())?;
    let init = perturbed_ensemble(twin.truth_at(window.start), cfg.ensemble_size, init_seed)?;
    run_cycles(twin, init, window, |e, y| filter.analyze(e, y), observer)
}

/// ETKF run (no localization) from a perturbed truth at the window start;
/// `observer` sees every analysis ensemble.
pub fn run_etkf<O>(
    twin: &Twin<'_>,
    members: usize,
    inflation: f64,
    window: Window,
    init_seed: u64,
    observer: O,
) -> Result<DiagnosticsSeries>
where
    O: FnMut(usize, &Ensemble) -> Result<()>,
{
    let cfg = FilterConfig::new(members, inflation, LocalizationScheme::None)?;
    let init = perturbed_ensemble(twin.truth_at(window.start), members, init_seed)?;
    run_cycles(
        twin,
        init,
        window,
        |e, y| {
            *e = etkf_analysis(e, y, twin.op, &cfg)?;
            Ok(())
        },
        observer,
    )
}
