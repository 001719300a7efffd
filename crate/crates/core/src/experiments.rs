//! Monte Carlo driver: per-trial pipeline, SNR × distance sweeps, RMSE
//! aggregation and CSV / manifest output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use log::{debug, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{
    active_subbands, apply_radar_channel, calibrate_tx_power, channel_amplitude, SceneConfig,
    TargetTruth,
};
use crate::dsp::seeded_rng;
use crate::error::{Error, Result};
use crate::fusion::{fuse_subband_estimates, fused_variance, FusedEstimate};
use crate::sensing::{crlb, estimate_targets, SensingConfig, SubbandEstimate};
use crate::waveform::{build_fresnel_basis, generate_payload, FresnelBasis};
use crate::C64;

pub use crate::dsp::derive_seed;

/// Receiver-side settings shared by every trial.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sensing: SensingConfig,
    /// Subbands whose path loss at the primary target reaches this value are
    /// switched off.
    pub pl_threshold_db: f64,
    /// Mean payload power `P_avg`.
    pub payload_power: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sensing: SensingConfig::default(),
            pl_threshold_db: 110.0,
            payload_power: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensing.validate()?;
        if !self.pl_threshold_db.is_finite() {
            return Err(Error::invalid("pl_threshold_db", "must be finite"));
        }
        if !(self.payload_power.is_finite() && self.payload_power > 0.0) {
            return Err(Error::invalid("payload_power", "must be > 0"));
        }
        Ok(())
    }
}

/// Everything one trial produced.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    /// Targets as simulated, including the drawn scattering phases.
    pub truth: Vec<TargetTruth>,
    /// Subbands that passed the path-loss filter.
    pub active: Vec<usize>,
    /// Estimates indexed by subband; empty for inactive or dropped subbands.
    pub per_subband: Vec<Vec<SubbandEstimate>>,
    /// Active subbands whose estimator failed on this trial.
    pub dropped: Vec<usize>,
    /// Empty when no subband contributed.
    pub fused: Vec<FusedEstimate>,
}

struct Bases(BTreeMap<usize, FresnelBasis>);

impl Bases {
    fn for_scene(scene: &SceneConfig) -> Result<Self> {
        let mut map = BTreeMap::new();
        for sb in &scene.subbands {
            if let std::collections::btree_map::Entry::Vacant(e) = map.entry(sb.num_chirps) {
                e.insert(build_fresnel_basis(sb.num_chirps)?);
            }
        }
        Ok(Self(map))
    }

    fn get(&self, order: usize) -> &FresnelBasis {
        &self.0[&order]
    }
}

/// Copy of `scene` at reference SNR `snr_db` with the primary target moved to
/// `distance_m` (other targets keep their offsets) and the transmit scale
/// recalibrated.
pub fn prepare_scene(
    template: &SceneConfig,
    snr_db: f64,
    distance_m: f64,
    payload_power: f64,
) -> Result<SceneConfig> {
    let mut scene = template.clone();
    scene.reference.snr_db = snr_db;
    let first = scene
        .targets
        .first()
        .ok_or_else(|| Error::invalid("targets", "at least one target is required"))?
        .range_m;
    let shift = distance_m - first;
    for t in &mut scene.targets {
        t.range_m += shift;
    }
    scene.validate()?;
    scene.tx_amplitude_scale = calibrate_tx_power(&scene, payload_power)?;
    Ok(scene)
}

/// Runs the full chain once: payload, channel, per-subband estimation and
/// fusion. Deterministic in `seed`.
pub fn run_trial(scene: &SceneConfig, pipeline: &PipelineConfig, seed: u64) -> Result<TrialOutcome> {
    scene.validate()?;
    pipeline.validate()?;
    run_trial_with(scene, pipeline, &Bases::for_scene(scene)?, seed)
}

fn run_trial_with(
    scene: &SceneConfig,
    pipeline: &PipelineConfig,
    bases: &Bases,
    seed: u64,
) -> Result<TrialOutcome> {
    let k_total = scene.subbands.len();
    let num_targets = scene.targets.len();

    let mut scene = scene.clone();
    let mut phase_rng = seeded_rng(derive_seed(seed, &[2]));
    for t in &mut scene.targets {
        let phase: f64 = phase_rng.random_range(0.0..2.0 * PI);
        t.scatter = C64::from_polar(t.scatter.norm(), phase);
    }

    let active = active_subbands(scene.targets[0].range_m, &scene, pipeline.pl_threshold_db);
    let mut per_subband = vec![Vec::new(); k_total];
    let mut dropped = Vec::new();
    for &k in &active {
        let sb = &scene.subbands[k];
        let basis = bases.get(sb.num_chirps);
        let payload = generate_payload(sb, pipeline.payload_power, derive_seed(seed, &[0, k as u64]));
        let cube = apply_radar_channel(&payload, basis, &scene, sb, derive_seed(seed, &[1, k as u64]))?;
        let truth_amp = scene
            .targets
            .iter()
            .map(|t| Ok((t.range_m, channel_amplitude(sb, t.range_m, scene.tx_amplitude_scale)? * t.scatter.norm())))
            .collect::<Result<Vec<_>>>()?;
        match estimate_targets(&cube, basis, &payload, num_targets, &pipeline.sensing, Some(&truth_amp)) {
            Ok(list) => per_subband[k] = list,
            Err(Error::Estimation(msg)) => {
                warn!("subband {k} dropped: {msg}");
                dropped.push(k);
            }
            Err(e) => return Err(e),
        }
    }

    let fused = if per_subband.iter().any(|l| !l.is_empty()) {
        fuse_subband_estimates(&per_subband, k_total, num_targets)?
    } else {
        debug!("no contributing subband");
        Vec::new()
    };
    Ok(TrialOutcome {
        truth: scene.targets,
        active,
        per_subband,
        dropped,
        fused,
    })
}

pub const TRIAL_CSV_HEADER: [&str; 8] = [
    "source",
    "target",
    "range_m",
    "velocity_mps",
    "true_range_m",
    "true_velocity_mps",
    "crlb_range_sqrt",
    "crlb_velocity_sqrt",
];

/// Reorders estimates so that entry `p` is the one nearest in range to
/// truth target `p`.
fn align_to_truth(
    truth: &[(f64, f64)],
    rows: Vec<Option<(f64, f64, f64, f64)>>,
) -> Vec<Option<(f64, f64, f64, f64)>> {
    let mut pool: Vec<Option<(f64, f64, f64, f64)>> = rows;
    truth
        .iter()
        .map(|&(r, _)| {
            let j = (0..pool.len())
                .filter(|&j| pool[j].is_some())
                .min_by(|&a, &b| {
                    let da = (pool[a].unwrap().0 - r).abs();
                    let db = (pool[b].unwrap().0 - r).abs();
                    da.total_cmp(&db)
                })?;
            pool[j].take()
        })
        .collect()
}

impl TrialOutcome {
    /// One row per source and target. Subbands without estimates keep one
    /// row per target with empty estimate fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Precondition(format!("csv write failed: {e}"));
        w.write_record(TRIAL_CSV_HEADER).map_err(io)?;
        let truth: Vec<(f64, f64)> = self.truth.iter().map(|t| (t.range_m, t.velocity_mps)).collect();
        let mut emit = |label: String, rows: Vec<Option<(f64, f64, f64, f64)>>| -> Result<()> {
            for (p, row) in align_to_truth(&truth, rows).into_iter().enumerate() {
                let fields = row.map(|(r, v, sr, sv)| [r, v, sr, sv].map(|x| x.to_string()));
                let [r, v, sr, sv] = fields.unwrap_or_default();
                w.write_record([
                    label.clone(),
                    p.to_string(),
                    r,
                    v,
                    truth[p].0.to_string(),
                    truth[p].1.to_string(),
                    sr,
                    sv,
                ])
                .map_err(io)?;
            }
            Ok(())
        };
        let n = self.truth.len();
        for (k, list) in self.per_subband.iter().enumerate() {
            let rows = if list.is_empty() {
                vec![None; n]
            } else {
                list.iter()
                    .map(|e| Some((e.range_m, e.velocity_mps, e.var_range.sqrt(), e.var_velocity.sqrt())))
                    .collect()
            };
            emit(Source::Subband(k).label(), rows)?;
        }
        let rows = if self.fused.is_empty() {
            vec![None; n]
        } else {
            self.fused
                .iter()
                .map(|f| Some((f.range_m, f.velocity_mps, f.fused_var_range.sqrt(), f.fused_var_velocity.sqrt())))
                .collect()
        };
        emit(Source::Fused.label(), rows)?;
        w.flush()
            .map_err(|e| Error::Precondition(format!("csv write failed: {e}")))?;
        Ok(())
    }
}

/// Sweep over reference SNR and primary-target distance.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub snr_grid_db: Vec<f64>,
    pub distance_grid_m: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.snr_grid_db.is_empty() {
            return Err(Error::invalid("snr_grid_db", "must not be empty"));
        }
        if let Some(s) = self.snr_grid_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid("snr_grid_db", format!("non-finite entry {s}")));
        }
        if self.distance_grid_m.is_empty() {
            return Err(Error::invalid("distance_grid_m", "must not be empty"));
        }
        if let Some(d) = self.distance_grid_m.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::invalid("distance_grid_m", format!("entries must be > 0, got {d}")));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be >= 1"));
        }
        self.pipeline.validate()?;
        for (s, d) in self.grid() {
            prepare_scene(&self.scene, s, d, self.pipeline.payload_power)?;
        }
        Ok(())
    }

    fn grid(&self) -> Vec<(f64, f64)> {
        self.snr_grid_db
            .iter()
            .flat_map(|&s| self.distance_grid_m.iter().map(move |&d| (s, d)))
            .collect()
    }
}

/// Result source: one sensing processor or the fused output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Source {
    Subband(usize),
    Fused,
}

impl Source {
    pub fn label(&self) -> String {
        match self {
            Source::Subband(k) => format!("sp{}", k + 1),
            Source::Fused => "fused".to_string(),
        }
    }
}

/// Signed per-target errors `(range, velocity)` of one source in one trial;
/// `None` when the source did not contribute.
pub type TrialErrors = Vec<Option<Vec<(f64, f64)>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricStats {
    pub rmse: Option<f64>,
    pub stderr: Option<f64>,
    pub crlb_sqrt: Option<f64>,
    /// Trials in which the source contributed.
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceStats {
    pub source: Source,
    pub range: MetricStats,
    pub velocity: MetricStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub distance_m: f64,
    pub active: Vec<usize>,
    /// Subband sources in order, then the fused source.
    pub sources: Vec<SourceStats>,
    /// Per-trial errors, by trial index then source.
    #[serde(skip)]
    pub trial_errors: Vec<TrialErrors>,
}

impl SweepPoint {
    pub fn source(&self, source: Source) -> &SourceStats {
        self.sources
            .iter()
            .find(|s| s.source == source)
            .expect("every source has a row")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub num_subbands: usize,
    pub points: Vec<SweepPoint>,
}

/// Pairs each truth target with the nearest unused estimate in range.
fn match_errors(truth: &[TargetTruth], est: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut used = vec![false; est.len()];
    truth
        .iter()
        .filter_map(|t| {
            let j = (0..est.len())
                .filter(|&j| !used[j])
                .min_by(|&a, &b| {
                    (est[a].0 - t.range_m)
                        .abs()
                        .total_cmp(&(est[b].0 - t.range_m).abs())
                })?;
            used[j] = true;
            Some((est[j].0 - t.range_m, est[j].1 - t.velocity_mps))
        })
        .collect()
}

fn trial_errors(outcome: &TrialOutcome) -> TrialErrors {
    let mut out: TrialErrors = outcome
        .per_subband
        .iter()
        .map(|list| {
            (!list.is_empty()).then(|| {
                let est: Vec<_> = list.iter().map(|e| (e.range_m, e.velocity_mps)).collect();
                match_errors(&outcome.truth, &est)
            })
        })
        .collect();
    out.push((!outcome.fused.is_empty()).then(|| {
        let est: Vec<_> = outcome.fused.iter().map(|e| (e.range_m, e.velocity_mps)).collect();
        match_errors(&outcome.truth, &est)
    }));
    out
}

fn metric_stats(sq_sum: f64, count: usize, trials: usize, crlb_sqrt: Option<f64>) -> MetricStats {
    if trials == 0 || count == 0 {
        return MetricStats {
            rmse: None,
            stderr: None,
            crlb_sqrt: None,
            trials: 0,
        };
    }
    let rmse = (sq_sum / count as f64).sqrt();
    MetricStats {
        rmse: Some(rmse),
        stderr: Some(rmse / (2.0 * trials as f64).sqrt()),
        crlb_sqrt,
        trials,
    }
}

/// `(√CRLB_range, √CRLB_velocity)` of the primary target per active subband,
/// from the true amplitude, followed by the fused bound.
fn point_bounds(scene: &SceneConfig, active: &[usize], payload_power: f64) -> Result<Vec<Option<(f64, f64)>>> {
    let k_total = scene.subbands.len();
    let r = scene.targets[0].range_m;
    let mut out = vec![None; k_total + 1];
    let mut vr = Vec::new();
    let mut vv = Vec::new();
    for &k in active {
        let sb = &scene.subbands[k];
        let amp = channel_amplitude(sb, r, scene.tx_amplitude_scale)? * scene.targets[0].scatter.norm();
        let (a, b) = crlb(sb, amp, payload_power)?;
        out[k] = Some((a.sqrt(), b.sqrt()));
        vr.push(a);
        vv.push(b);
    }
    if !active.is_empty() {
        out[k_total] = Some((fused_variance(&vr)?.sqrt(), fused_variance(&vv)?.sqrt()));
    }
    Ok(out)
}

fn aggregate(
    snr_db: f64,
    distance_m: f64,
    active: Vec<usize>,
    bounds: &[Option<(f64, f64)>],
    trial_errors: Vec<TrialErrors>,
) -> SweepPoint {
    let num_sources = bounds.len();
    let sources = (0..num_sources)
        .map(|s| {
            let (mut sr, mut sv, mut count, mut trials) = (0.0, 0.0, 0usize, 0usize);
            for errs in trial_errors.iter().filter_map(|t| t[s].as_ref()) {
                trials += 1;
                for (er, ev) in errs {
                    sr += er * er;
                    sv += ev * ev;
                    count += 1;
                }
            }
            let source = if s + 1 == num_sources {
                Source::Fused
            } else {
                Source::Subband(s)
            };
            SourceStats {
                source,
                range: metric_stats(sr, count, trials, bounds[s].map(|b| b.0)),
                velocity: metric_stats(sv, count, trials, bounds[s].map(|b| b.1)),
            }
        })
        .collect();
    SweepPoint {
        snr_db,
        distance_m,
        active,
        sources,
        trial_errors,
    }
}

/// Runs every grid point and trial on the current rayon pool. Per-trial seeds
/// are `derive_seed(seed, [snr index, distance index, trial])`, and results
/// are reduced in index order, so the output does not depend on the thread
/// count.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let bases = Bases::for_scene(&spec.scene)?;
    let n_dist = spec.distance_grid_m.len();
    let scenes: Vec<SceneConfig> = spec
        .grid()
        .into_iter()
        .map(|(s, d)| prepare_scene(&spec.scene, s, d, spec.pipeline.payload_power))
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<(Vec<usize>, TrialErrors)> = tasks
        .par_iter()
        .map(|&(p, t)| {
            let seed = derive_seed(spec.seed, &[(p / n_dist) as u64, (p % n_dist) as u64, t as u64]);
            let outcome = run_trial_with(&scenes[p], &spec.pipeline, &bases, seed)?;
            Ok((outcome.active.clone(), trial_errors(&outcome)))
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(scenes.len());
    let mut iter = outcomes.into_iter();
    for (p, scene) in scenes.iter().enumerate() {
        let chunk: Vec<_> = iter.by_ref().take(spec.trials).collect();
        let active = chunk.first().map(|c| c.0.clone()).unwrap_or_default();
        let bounds = point_bounds(scene, &active, spec.pipeline.payload_power)?;
        let errs = chunk.into_iter().map(|c| c.1).collect();
        let (s, d) = (spec.snr_grid_db[p / n_dist], spec.distance_grid_m[p % n_dist]);
        points.push(aggregate(s, d, active, &bounds, errs));
    }
    Ok(SweepResult {
        num_subbands: spec.scene.subbands.len(),
        points,
    })
}

pub const CSV_HEADER: [&str; 8] = [
    "snr_db",
    "distance_m",
    "source",
    "metric",
    "rmse",
    "stderr",
    "crlb_sqrt",
    "trials",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepResult {
    /// One row per grid point, source and metric. Sources that did not
    /// contribute keep their row with empty statistics.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Precondition(format!("csv write failed: {e}"));
        w.write_record(CSV_HEADER).map_err(io)?;
        for p in &self.points {
            for s in &p.sources {
                for (metric, m) in [("range", &s.range), ("velocity", &s.velocity)] {
                    w.write_record([
                        p.snr_db.to_string(),
                        p.distance_m.to_string(),
                        s.source.label(),
                        metric.to_string(),
                        opt(m.rmse),
                        opt(m.stderr),
                        opt(m.crlb_sqrt),
                        m.trials.to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
        w.flush()
            .map_err(|e| Error::Precondition(format!("csv write failed: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ASCII"))
    }
}

/// Run manifest written next to the CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub started_unix_s: u64,
    pub threads: usize,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(config: serde_json::Value, seed: u64, wall_time_s: f64, started_unix_s: u64) -> Self {
        Self {
            version: version_string(),
            seed,
            wall_time_s,
            started_unix_s,
            threads: rayon::current_num_threads(),
            config,
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)
            .map_err(|e| Error::Precondition(format!("manifest write failed: {e}")))
    }
}

/// `v<crate version>`, suffixed with the commit hash when one was provided
/// at build time through `THZ_OCDM_GIT_HASH`.
pub fn version_string() -> String {
    match option_env!("THZ_OCDM_GIT_HASH") {
        Some(hash) if !hash.is_empty() => format!("v{}-g{hash}", env!("CARGO_PKG_VERSION")),
        _ => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}
