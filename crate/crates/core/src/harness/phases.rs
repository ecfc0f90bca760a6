//! The persisted pipeline: nature run, observations, map training, GC
//! tuning, verification sweep and report, each writing into a run
//! directory named by the configuration hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SchemeKind};
use super::study::{
    init_seed, nature_seed, observation_seed, train_maps, tune_setup, verify_benchmark, verify_serial, MapRequest,
    ObsSetup, SetupData,
};
use crate::cycling::Window;
use crate::diagnostics::aggregate;
use crate::error::{Error, Result};
use crate::filters::FilterConfig;
use crate::io::{read_json, write_atomic, write_json};
use crate::localization::{load_scheme, save_scheme, LocalizationScheme, MapMetadata};
use crate::model::{nature_run, Trajectory, TrajectoryHeader};
use crate::observations::{
    generate_observations, load_observations, save_observations, NonlinearObsParams, ObservationHeader,
    ObservationOperator,
};
use crate::stats::{save_correlations, CorrelationArchiveHeader};
use crate::training::{load_tuning_table, save_tuning_table, GcTuningEntry};

pub const PHASE_NATURE: &str = "nature";
pub const PHASE_OBSERVE: &str = "observe";
pub const PHASE_TRAIN: &str = "train";
pub const PHASE_TUNE: &str = "tune-gc";
pub const PHASE_VERIFY: &str = "verify";
pub const PHASE_REPORT: &str = "report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    /// Seconds since the Unix epoch.
    pub completed_at: u64,
}

/// Provenance of a run directory. Phase entries are only ever added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    /// Paths relative to the run directory.
    pub artifacts: BTreeMap<String, PathBuf>,
    pub phases: BTreeMap<String, PhaseRecord>,
    pub conventions: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(cfg: &ExperimentConfig) -> Self {
        let conventions = [
            ("ensemble_initialization", "truth at the window start plus independent N(0,1) perturbations per member"),
            ("training_archive", "analysis ensembles of the regressor after the filter spin-up"),
            ("benchmark", "ETKF without localization or inflation, same spin-up exclusion as every other run"),
            ("nonlinear_extrema", "minimum and maximum over all components of the recorded truth"),
            ("divergence", "any non-finite state or time-mean RMSE above 10"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .chain([
            ("filter_spinup_cycles".to_string(), cfg.filter_spinup.to_string()),
            ("inflation_grid".to_string(), format!("{:?}", cfg.inflation_grid)),
        ])
        .collect();
        Self {
            config_hash: cfg.hash(),
            master_seed: cfg.master_seed,
            seeds: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            phases: BTreeMap::new(),
            conventions,
        }
    }

    pub fn is_complete(&self, phase: &str) -> bool {
        self.phases.contains_key(phase)
    }
}

/// A run directory bound to one configuration.
#[derive(Debug)]
pub struct Run {
    cfg: ExperimentConfig,
    dir: PathBuf,
    manifest: RunManifest,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact { path: path.to_path_buf(), reason: format!("run the {what} phase first") })
    }
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub kind: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "S")]
    pub s: Option<usize>,
    pub inflation: f64,
    pub half_width: Option<f64>,
    pub mean_rmse: f64,
    pub mean_spread: f64,
    pub normalized_rmse: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegressorRecord {
    regressor: String,
    archived: usize,
    mean_rmse: f64,
    mean_spread: f64,
    half_width: Option<f64>,
    fallback_regressions: usize,
}

impl Run {
    /// Opens (or creates) the run directory of `cfg`.
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.run_dir();
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let m: RunManifest = read_json(&manifest_path)?;
            if m.config_hash != cfg.hash() {
                return Err(Error::Malformed {
                    path: manifest_path,
                    reason: format!("manifest hash {} does not match config {}", m.config_hash, cfg.hash()),
                });
            }
            m
        } else {
            RunManifest::new(&cfg)
        };
        Ok(Self { cfg, dir, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    fn complete(&mut self, phase: &str) -> Result<()> {
        self.manifest.phases.insert(phase.to_string(), PhaseRecord { completed_at: now() });
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<()> {
        write_json(&self.path("config.json"), &self.cfg)?;
        write_json(&self.path("manifest.json"), &self.manifest)
    }

    fn record(&mut self, name: String, rel: PathBuf) {
        self.manifest.artifacts.insert(name, rel);
    }

    fn truth_rel() -> PathBuf {
        PathBuf::from("nature/truth.bin")
    }

    fn obs_rel(setup: &ObsSetup) -> PathBuf {
        PathBuf::from(format!("observations/{}.csv", setup.label()))
    }

    fn map_rel(setup: &ObsSetup, scheme: SchemeKind, k: usize, s: usize) -> PathBuf {
        PathBuf::from(format!("training/{}/{}-K{k}-S{s}.json", setup.label(), scheme.as_str()))
    }

    fn tuning_rel(setup: &ObsSetup) -> PathBuf {
        PathBuf::from(format!("tuning/{}.csv", setup.label()))
    }

    pub fn results_path(&self) -> PathBuf {
        self.path("results/results.csv")
    }

    pub fn report_path(&self) -> PathBuf {
        self.path("report.md")
    }

    fn skip(&self, phase: &str, outputs: &[PathBuf]) -> bool {
        let done = self.manifest.is_complete(phase) && outputs.iter().all(|p| p.exists());
        if done {
            info!("{phase}: already complete in {}", self.dir.display());
        }
        done
    }

    /// Integrates and stores the truth trajectory shared by every setup.
    pub fn nature(&mut self) -> Result<()> {
        let truth_path = self.path(Self::truth_rel());
        if self.skip(PHASE_NATURE, &[truth_path.clone()]) {
            return Ok(());
        }
        let n_steps = self.cfg.n_cycles() * self.cfg.max_stride();
        let seed = nature_seed(self.cfg.master_seed);
        info!("nature: {n_steps} steps");
        let truth = nature_run(&self.cfg.model, seed, self.cfg.spinup_steps, n_steps)?;
        truth.save(&truth_path, &TrajectoryHeader::for_run(&self.cfg.model, n_steps, seed))?;
        self.manifest.seeds.insert("nature".into(), seed);
        self.record("truth".into(), Self::truth_rel());
        self.complete(PHASE_NATURE)
    }

    fn load_truth(&self) -> Result<Trajectory> {
        let p = self.path(Self::truth_rel());
        require(&p, PHASE_NATURE)?;
        Ok(Trajectory::load(&p)?.0)
    }

    /// Observation records for every setup.
    pub fn observe(&mut self) -> Result<()> {
        let outputs: Vec<_> = self.cfg.setups.iter().map(|s| self.path(Self::obs_rel(s))).collect();
        if self.skip(PHASE_OBSERVE, &outputs) {
            return Ok(());
        }
        let truth = self.load_truth()?;
        // Build every operator before writing anything.
        let mut prepared = Vec::new();
        for setup in &self.cfg.setups {
            let needed = self.cfg.n_cycles() * setup.stride + 1;
            if truth.len() < needed {
                return Err(Error::Config(format!(
                    "truth holds {} states, {} needs {needed}",
                    truth.len(),
                    setup.label()
                )));
            }
            let prefix = truth.prefix(needed)?;
            let op = super::study::build_operator(setup, self.cfg.model.n_state, Some(&prefix))?;
            prepared.push((*setup, prefix, op));
        }
        for (setup, prefix, op) in prepared {
            let seed = observation_seed(self.cfg.master_seed, &setup);
            let records = generate_observations(&prefix, &op, setup.stride, seed)?;
            let params = op.nonlinear_params();
            let header = ObservationHeader {
                kind: setup.kind,
                n_obs: setup.n_obs,
                n: setup.stride,
                seed,
                a: params.map(|p| p.a),
                b: params.map(|p| p.b),
            };
            save_observations(&self.path(Self::obs_rel(&setup)), &records, &header)?;
            self.manifest.seeds.insert(format!("observations/{}", setup.label()), seed);
            self.record(format!("observations/{}", setup.label()), Self::obs_rel(&setup));
        }
        self.complete(PHASE_OBSERVE)
    }

    /// Truth, operator and records of one setup, from disk.
    pub fn load_setup(&self, setup: &ObsSetup) -> Result<SetupData> {
        let obs_path = self.path(Self::obs_rel(setup));
        require(&obs_path, PHASE_OBSERVE)?;
        let truth = self.load_truth()?;
        let (records, header) = load_observations(&obs_path)?;
        if header.kind != setup.kind || header.n_obs != setup.n_obs || header.n != setup.stride {
            return Err(Error::Malformed { path: obs_path, reason: "header does not match the setup".into() });
        }
        if records.len() < self.cfg.n_cycles() {
            return Err(Error::Malformed {
                path: obs_path,
                reason: format!("{} records, need {}", records.len(), self.cfg.n_cycles()),
            });
        }
        let nonlinear = match (header.a, header.b) {
            (Some(a), Some(b)) => Some(NonlinearObsParams::new(a, b)?),
            _ => None,
        };
        let op = ObservationOperator::new(setup.kind, setup.n_obs, self.cfg.model.n_state, nonlinear)?;
        let truth = truth.prefix(self.cfg.n_cycles() * setup.stride + 1)?;
        Ok(SetupData { model: self.cfg.model, setup: *setup, truth, op, records })
    }

    fn train_window(&self) -> Window {
        Window { start: 0, count: self.cfg.t_train, spinup: self.cfg.filter_spinup }
    }

    fn verify_window(&self) -> Window {
        Window { start: self.cfg.t_train, count: self.cfg.t_verify, spinup: self.cfg.filter_spinup }
    }

    fn map_outputs(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for setup in &self.cfg.setups {
            for &k in &self.cfg.ensemble_sizes {
                for &s in &self.cfg.s_values {
                    for scheme in [SchemeKind::Map, SchemeKind::Diagonal] {
                        out.push(self.path(Self::map_rel(setup, scheme, k, s)));
                    }
                }
            }
        }
        out
    }

    /// Runs the regressor filter and fits both maps for every (K, S).
    pub fn train(&mut self) -> Result<()> {
        if self.skip(PHASE_TRAIN, &self.map_outputs()) {
            return Ok(());
        }
        let data: Vec<SetupData> = self.cfg.setups.iter().map(|s| self.load_setup(s)).collect::<Result<_>>()?;
        let requests: Vec<MapRequest> = self
            .cfg
            .ensemble_sizes
            .iter()
            .flat_map(|&k| self.cfg.s_values.iter().map(move |&s| MapRequest { k, s }))
            .collect();
        let window = self.train_window();
        let cfg = &self.cfg;
        let outcomes: Vec<_> = data
            .par_iter()
            .map(|d| {
                info!("train: {}", d.setup.label());
                train_maps(d, &cfg.regressor, window, &requests, &cfg.half_width_grid, cfg.master_seed, cfg.write_archives)
            })
            .collect();
        let hash = self.cfg.hash();
        for (d, outcome) in data.iter().zip(outcomes) {
            let outcome = outcome?;
            let label = d.setup.label();
            let mut fallbacks = 0;
            for tm in &outcome.maps {
                let meta = MapMetadata {
                    k_train: tm.request.k,
                    l_train: self.cfg.regressor.members(),
                    t: outcome.archived,
                    s: tm.request.s,
                    obs_kind: d.setup.kind.as_str().into(),
                    regressor_id: self.cfg.regressor.id(),
                    created: format!("config:{hash}"),
                };
                let (n, m) = (d.model.n_state, d.op.n_obs());
                for (kind, scheme) in [
                    (SchemeKind::Map, LocalizationScheme::FullMap(tm.map.clone())),
                    (SchemeKind::Diagonal, LocalizationScheme::DiagonalMap(tm.diagonal.clone())),
                ] {
                    let rel = Self::map_rel(&d.setup, kind, tm.request.k, tm.request.s);
                    save_scheme(&self.path(&rel), &scheme, n, m, &meta)?;
                    self.record(format!("{}/{}", label, rel.file_stem().unwrap().to_string_lossy()), rel);
                }
                fallbacks += tm.fallbacks;
            }
            if let Some(archive) = &outcome.archive {
                let rel = PathBuf::from(format!("archives/{label}.bin"));
                let header = CorrelationArchiveHeader {
                    n_state: d.model.n_state,
                    n_obs: d.op.n_obs(),
                    k_sub: self.cfg.regressor.members(),
                    l: self.cfg.regressor.members(),
                    t: archive.len(),
                    s: 1,
                    seed: self.cfg.master_seed,
                    source_filter: self.cfg.regressor.id(),
                };
                save_correlations(&self.path(&rel), archive, &header)?;
                self.record(format!("archives/{label}"), rel);
            }
            let record = RegressorRecord {
                regressor: self.cfg.regressor.id(),
                archived: outcome.archived,
                mean_rmse: outcome.regressor_summary.mean_rmse,
                mean_spread: outcome.regressor_summary.mean_spread,
                half_width: outcome.regressor_half_width,
                fallback_regressions: fallbacks,
            };
            write_json(&self.path(format!("training/{label}/regressor.json")), &record)?;
            self.manifest.seeds.insert(
                format!("init/train/{label}"),
                init_seed(self.cfg.master_seed, &d.setup, "train", self.cfg.regressor.members()),
            );
        }
        self.complete(PHASE_TRAIN)
    }

    /// Tunes the GC half-width for every (setup, K, inflation) case.
    pub fn tune_gc(&mut self) -> Result<()> {
        let outputs: Vec<_> = self.cfg.setups.iter().map(|s| self.path(Self::tuning_rel(s))).collect();
        if self.skip(PHASE_TUNE, &outputs) {
            return Ok(());
        }
        let data: Vec<SetupData> = self.cfg.setups.iter().map(|s| self.load_setup(s)).collect::<Result<_>>()?;
        let window = self.train_window();
        let cfg = &self.cfg;
        let cases: Vec<(usize, usize, f64)> = (0..data.len())
            .flat_map(|d| {
                cfg.ensemble_sizes
                    .iter()
                    .flat_map(move |&k| cfg.inflation_grid.iter().map(move |&f| (d, k, f)))
            })
            .collect();
        let entries: Vec<Result<GcTuningEntry>> = cases
            .par_iter()
            .map(|&(d, k, f)| tune_setup(&data[d], k, f, &cfg.half_width_grid, window, cfg.master_seed))
            .collect();
        let mut tables: Vec<Vec<GcTuningEntry>> = vec![Vec::new(); data.len()];
        for (&(d, _, _), e) in cases.iter().zip(entries) {
            tables[d].push(e?);
        }
        for (d, table) in data.iter().zip(tables) {
            let rel = Self::tuning_rel(&d.setup);
            save_tuning_table(&self.path(&rel), &table)?;
            self.record(format!("tuning/{}", d.setup.label()), rel);
        }
        self.complete(PHASE_TUNE)
    }

    /// Verification sweep over every grid cell plus one benchmark per setup.
    pub fn verify(&mut self) -> Result<()> {
        let results = self.results_path();
        if self.skip(PHASE_VERIFY, &[results.clone()]) {
            return Ok(());
        }
        let mut rows = Vec::new();
        for setup in self.cfg.setups.clone() {
            rows.extend(self.verify_setup(&setup)?);
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r)?;
        }
        write_atomic(&results, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        self.record("results".into(), PathBuf::from("results/results.csv"));
        self.complete(PHASE_VERIFY)
    }

    fn verify_setup(&mut self, setup: &ObsSetup) -> Result<Vec<ResultRow>> {
        let data = self.load_setup(setup)?;
        let cfg = self.cfg.clone();
        let window = self.verify_window();
        let label = setup.label();

        let mut cells: Vec<(SchemeKind, usize, Option<usize>, f64, LocalizationScheme)> = Vec::new();
        let tuning = if cfg.schemes.contains(&SchemeKind::Gc) {
            let p = self.path(Self::tuning_rel(setup));
            require(&p, PHASE_TUNE)?;
            load_tuning_table(&p)?
        } else {
            Vec::new()
        };
        for &scheme in &cfg.schemes {
            for &k in &cfg.ensemble_sizes {
                match scheme {
                    SchemeKind::Map | SchemeKind::Diagonal => {
                        for &s in &cfg.s_values {
                            let p = self.path(Self::map_rel(setup, scheme, k, s));
                            require(&p, PHASE_TRAIN)?;
                            let (loaded, _) = load_scheme(&p)?;
                            for &f in &cfg.inflation_grid {
                                cells.push((scheme, k, Some(s), f, loaded.clone()));
                            }
                        }
                    }
                    SchemeKind::Gc => {
                        for &f in &cfg.inflation_grid {
                            let entry = tuning.iter().find(|e| e.k == k && e.inflation == f).ok_or_else(|| {
                                Error::MissingArtifact {
                                    path: self.path(Self::tuning_rel(setup)),
                                    reason: format!("no tuning entry for K={k}, inflation={f}"),
                                }
                            })?;
                            cells.push((scheme, k, None, f, LocalizationScheme::gaspari_cohn(entry.half_width)?));
                        }
                    }
                    SchemeKind::None => {
                        for &f in &cfg.inflation_grid {
                            cells.push((scheme, k, None, f, LocalizationScheme::None));
                        }
                    }
                }
            }
        }

        info!("verify: {label}, {} cells", cells.len() + 1);
        let benchmark = aggregate(&verify_benchmark(&data, cfg.benchmark_members, window, cfg.master_seed)?, None)?;
        let denom = (!benchmark.diverged).then_some(benchmark.mean_rmse);
        let summaries: Vec<Result<_>> = cells
            .par_iter()
            .map(|(_, k, _, f, scheme)| {
                let fc = FilterConfig::new(*k, *f, scheme.clone())?;
                aggregate(&verify_serial(&data, &fc, window, cfg.master_seed)?, denom)
            })
            .collect();

        let row = |scheme: &str, k, s, f, hw, sum: &crate::diagnostics::Summary| ResultRow {
            scheme: scheme.into(),
            kind: setup.kind.as_str().into(),
            m: setup.n_obs,
            n: setup.stride,
            k,
            s,
            inflation: f,
            half_width: hw,
            mean_rmse: sum.mean_rmse,
            mean_spread: sum.mean_spread,
            normalized_rmse: sum.normalized_rmse,
            diverged: sum.diverged,
        };
        let mut rows = vec![row("etkf", cfg.benchmark_members, None, 0.0, None, &aggregate_with(&benchmark, denom))];
        for ((scheme, k, s, f, loc), sum) in cells.iter().zip(summaries) {
            let hw = match loc {
                LocalizationScheme::GaspariCohn { half_width } => Some(*half_width),
                _ => None,
            };
            rows.push(row(scheme.as_str(), *k, *s, *f, hw, &sum?));
        }
        self.manifest.seeds.insert(
            format!("init/verify/{label}/benchmark"),
            init_seed(cfg.master_seed, setup, "verify", cfg.benchmark_members),
        );
        self.write_curves(setup)?;
        Ok(rows)
    }

    /// Map cross-sections `L(q, i, M/2)` with the diagonal map overlaid.
    fn write_curves(&mut self, setup: &ObsSetup) -> Result<()> {
        for &k in &self.cfg.ensemble_sizes.clone() {
            for &s in &self.cfg.s_values.clone() {
                let map_path = self.path(Self::map_rel(setup, SchemeKind::Map, k, s));
                let diag_path = self.path(Self::map_rel(setup, SchemeKind::Diagonal, k, s));
                if !map_path.exists() || !diag_path.exists() {
                    continue;
                }
                let (LocalizationScheme::FullMap(map), _) = load_scheme(&map_path)? else {
                    return Err(Error::Malformed { path: map_path, reason: "expected a full map".into() });
                };
                let (LocalizationScheme::DiagonalMap(diag), _) = load_scheme(&diag_path)? else {
                    return Err(Error::Malformed { path: diag_path, reason: "expected a diagonal map".into() });
                };
                let j = map.n_obs() / 2;
                let mut text = String::from("j,i,q,map,diagonal\n");
                for i in 0..map.n_state() {
                    for q in 0..map.n_state() {
                        writeln!(text, "{j},{i},{q},{},{}", map.get(q, i, j), diag.weights[(q, j)]).unwrap();
                    }
                }
                let rel = PathBuf::from(format!("results/curves/{}-K{k}-S{s}.csv", setup.label()));
                write_atomic(&self.path(&rel), text.as_bytes())?;
                self.record(format!("curves/{}-K{k}-S{s}", setup.label()), rel);
            }
        }
        Ok(())
    }

    /// Best inflation per (setup, scheme, K, S) from the results CSV, as Markdown.
    pub fn report(&mut self) -> Result<String> {
        let path = self.results_path();
        require(&path, PHASE_VERIFY)?;
        let rows = load_results(&path)?;
        let text = render_report(&rows);
        write_atomic(&self.report_path(), text.as_bytes())?;
        // Always re-rendered; the manifest keeps the first completion time.
        if !self.manifest.is_complete(PHASE_REPORT) {
            self.record("report".into(), PathBuf::from("report.md"));
            self.complete(PHASE_REPORT)?;
        }
        Ok(text)
    }
}

fn aggregate_with(s: &crate::diagnostics::Summary, denom: Option<f64>) -> crate::diagnostics::Summary {
    crate::diagnostics::Summary { normalized_rmse: denom.map(|d| s.mean_rmse / d), ..s.clone() }
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).map_err(|e| crate::io::missing(path, e))?;
    csv::Reader::from_reader(file).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Row with the lowest non-divergent time-mean RMSE among `rows`.
pub fn best_row<'a>(rows: impl IntoIterator<Item = &'a ResultRow>) -> Option<&'a ResultRow> {
    rows.into_iter()
        .filter(|r| !r.diverged && r.mean_rmse.is_finite())
        .min_by(|a, b| a.mean_rmse.total_cmp(&b.mean_rmse))
}

fn render_report(rows: &[ResultRow]) -> String {
    let mut groups: BTreeMap<(String, usize, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.kind.clone(), r.m, r.n)).or_default().push(r);
    }
    let mut out = String::from("# Verification summary\n\nBest inflation per scheme and ensemble size.\n");
    for ((kind, m, n), rows) in groups {
        writeln!(out, "\n## {kind}, M={m}, n={n}\n").unwrap();
        writeln!(out, "| scheme | K | S | inflation | half_width | mean_rmse | mean_spread | normalized_rmse |").unwrap();
        writeln!(out, "|---|---|---|---|---|---|---|---|").unwrap();
        let mut cases: BTreeMap<(String, usize, Option<usize>), Vec<&ResultRow>> = BTreeMap::new();
        for r in rows {
            cases.entry((r.scheme.clone(), r.k, r.s)).or_default().push(r);
        }
        for ((scheme, k, s), rs) in cases {
            let s_text = s.map(|v| v.to_string()).unwrap_or_default();
            match best_row(rs.iter().copied()) {
                Some(b) => writeln!(
                    out,
                    "| {scheme} | {k} | {s_text} | {} | {} | {:.4} | {:.4} | {} |",
                    b.inflation,
                    b.half_width.map(|c| c.to_string()).unwrap_or_default(),
                    b.mean_rmse,
                    b.mean_spread,
                    b.normalized_rmse.map(|v| format!("{v:.3}")).unwrap_or_default()
                )
                .unwrap(),
                None => writeln!(out, "| {scheme} | {k} | {s_text} | | | diverged | | |").unwrap(),
            }
        }
    }
    out
}

/// Nature run and observation records.
pub fn run_nature_phase(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut run = Run::open(cfg.clone())?;
    run.nature()?;
    run.observe()?;
    Ok(run.manifest)
}

/// Map training and GC tuning.
pub fn run_training_phase(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut run = Run::open(cfg.clone())?;
    run.train()?;
    run.tune_gc()?;
    Ok(run.manifest)
}

/// Verification sweep; returns the results CSV path.
pub fn run_verification_phase(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let mut run = Run::open(cfg.clone())?;
    run.verify()?;
    Ok(run.results_path())
}
