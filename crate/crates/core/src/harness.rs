//! Experiment harness: deterministic scenario construction, gated and
//! filtered policy rollouts, in-distribution calibration, the offline
//! safety-filter replay, and the aggregated metrics report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cbf::{self, CbfFilter, EllipsoidSafeSet, ReplayRow};
use crate::config::{ExperimentConfig, Scenario};
use crate::data::Dataset;
use crate::ddpm::TrainingCurve;
use crate::ensemble::{
    self, EnsembleModel, EnsembleTraining, ExecutionWorld, FallbackController, RolloutTrace,
    TraceRow,
};
use crate::error::Error;
use crate::expert::{self, SceneDistribution};
use crate::ood::{self, IdModel, IdModelFile, LrtGate};
use crate::sim::{self, Pose, Rot6, ScenarioEvent, ScenarioEventKind, SimState, Vec3, OBS_DIM};
use crate::stats::{self, RngStream};
use crate::Result;

// Seed-stream bases. Policy streams hand children 1..=N to the ensemble
// members, so rollout indices are spaced on disjoint bases instead.
const EVAL_SCENE_STREAM: u64 = 10_000;
const EVAL_EVENT_STREAM: u64 = 20_000;
const EVAL_POLICY_STREAM: u64 = 30_000;
const CALIB_SCENE_STREAM: u64 = 40_000;
const CALIB_POLICY_STREAM: u64 = 50_000;

pub const METRICS_FILE: &str = "metrics.toml";
pub const ID_MODEL_FILE: &str = "id_model.toml";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const TRAINING_CURVE_FILE: &str = "training_curve.csv";
pub const REPLAY_FILE: &str = "replay.csv";
pub const REPLAY_META_FILE: &str = "replay_meta.toml";
pub const SIGMA_CHART_FILE: &str = "sigma.svg";
pub const REPLAY_CHART_FILE: &str = "cbf_panels.svg";

/// Toggles applied on top of the configuration for one run.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub use_gate: bool,
    pub use_cbf: bool,
    pub fallback: FallbackController,
}

impl RunOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> RunOptions {
        RunOptions {
            use_gate: true,
            use_cbf: true,
            fallback: cfg.ood.fallback,
        }
    }
}

// ── metrics ─────────────────────────────────────────────────────────────

/// Aggregated result of one scenario run.
///
/// For the offline replay scenario the rollout fields describe the single
/// replayed trajectory and the gate fields stay at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub num_rollouts: usize,
    pub num_success: usize,
    pub success_rate: f64,
    pub num_triggered: usize,
    pub ood_trigger_rate: f64,
    /// Median over triggering rollouts of the first flagged step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_first_ood_step: Option<f64>,
    /// Present only for gated in-distribution runs, where every trigger is
    /// spurious by construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub false_positive_rate: Option<f64>,
    /// Smallest barrier value seen at the constrained point, when filtered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_h: Option<f64>,
    /// Smallest barrier value of the unfiltered replay reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_h_reference: Option<f64>,
    pub steps_filtered: usize,
    pub steps_corrected: usize,
    pub mean_correction: f64,
    pub max_correction: f64,
}

impl MetricsReport {
    /// Internal-consistency checks: rates live in [0, 1] and match their
    /// counts exactly, and correction counters are ordered.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_rollouts as f64;
        if self.num_rollouts == 0 {
            return Err(Error::config("num_rollouts", "report covers no rollouts"));
        }
        if self.num_success > self.num_rollouts || self.num_triggered > self.num_rollouts {
            return Err(Error::config("counts", "more outcomes than rollouts"));
        }
        if self.success_rate != self.num_success as f64 / n {
            return Err(Error::config("success_rate", "rate does not match its count"));
        }
        if self.ood_trigger_rate != self.num_triggered as f64 / n {
            return Err(Error::config("ood_trigger_rate", "rate does not match its count"));
        }
        for (name, rate) in [
            ("success_rate", self.success_rate),
            ("ood_trigger_rate", self.ood_trigger_rate),
            ("false_positive_rate", self.false_positive_rate.unwrap_or(0.0)),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::config(name, "rate outside [0, 1]"));
            }
        }
        if self.median_first_ood_step.is_some() && self.num_triggered == 0 {
            return Err(Error::config(
                "median_first_ood_step",
                "median present without any triggering rollout",
            ));
        }
        if self.steps_corrected > self.steps_filtered {
            return Err(Error::config("steps_corrected", "more corrections than filtered steps"));
        }
        if self.max_correction < self.mean_correction
            || !self.mean_correction.is_finite()
            || !self.max_correction.is_finite()
            || self.mean_correction < 0.0
        {
            return Err(Error::config("corrections", "inconsistent correction statistics"));
        }
        Ok(())
    }
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    report.validate()?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = toml::to_string_pretty(report)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    let report: MetricsReport =
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    report.validate()?;
    Ok(report)
}

// ── scenario construction ───────────────────────────────────────────────

/// Needle-tip world position implied by the robot-state half of an
/// observation (valid while the needle is held).
fn tip_from_obs(obs: &[f64; OBS_DIM]) -> Vec3 {
    let pos = Vec3([obs[0], obs[1], obs[2]]);
    let rot6 = Rot6([obs[3], obs[4], obs[5], obs[6], obs[7], obs[8]]);
    Pose::new(pos, rot6).transform_point(sim::NEEDLE_OFFSET)
}

/// Sample the initial world for one rollout. The moved-camera scenario
/// re-aims the camera from a band that must clear the demonstration band
/// by at least twenty degrees of elevation.
fn scene_for(cfg: &ExperimentConfig, index: usize) -> Result<SimState> {
    let mut rng = RngStream::new(cfg.seed, EVAL_SCENE_STREAM + index as u64);
    let mut state = cfg.scene.sample(&mut rng)?;
    if cfg.scenario == Scenario::MovedCamera {
        let shifted = &cfg.scenario_params.ood_camera_elevation_deg;
        let train = &cfg.scene.camera_elevation_deg;
        let gap = (train[0] - shifted[1]).max(shifted[0] - train[1]);
        if gap < 20.0 {
            return Err(Error::config(
                "scenario_params.ood_camera_elevation_deg",
                "shifted camera band must clear the demonstration band by 20 degrees",
            ));
        }
        let ood_scene = SceneDistribution {
            camera_azimuth_deg: cfg.scenario_params.ood_camera_azimuth_deg,
            ..cfg.scene.clone()
        };
        let mut cam_rng = RngStream::new(cfg.seed, EVAL_EVENT_STREAM + index as u64);
        state.camera_pose =
            ood_scene.sample_camera(&mut cam_rng, state.phantom_pose.position, *shifted)?;
    }
    Ok(state)
}

/// Horizontal unit direction drawn uniformly by angle.
fn random_xy_direction(rng: &mut RngStream) -> Vec3 {
    let theta = rng.uniform_in(0.0, std::f64::consts::TAU);
    Vec3([theta.cos(), theta.sin(), 0.0])
}

/// Safe-set placement for a sampled world: configured semi-axes centered
/// between the entry and exit points.
pub fn safe_set_for(cfg: &ExperimentConfig, state: &SimState) -> EllipsoidSafeSet {
    EllipsoidSafeSet {
        semi_axes: cfg.cbf.semi_axes,
        origin: (state.entry_point() + state.exit_point()) * 0.5,
        alpha_cbf: cfg.cbf.alpha_cbf,
        gamma_d: cfg.cbf.gamma_d,
    }
}

/// Build the perturbation schedule for one rollout.
///
/// The post-insertion move depends on when the needle actually gets below
/// the surface, so it runs a deterministic unfiltered pre-pass with the
/// same policy seed and schedules the move at the first step whose
/// observation already shows the required depth; the perturbed run then
/// replays identically up to that step.
fn events_for(
    cfg: &ExperimentConfig,
    model: &EnsembleModel,
    state: &SimState,
    index: usize,
) -> Result<Vec<ScenarioEvent>> {
    let p = &cfg.scenario_params;
    let mut event_rng = RngStream::new(cfg.seed, EVAL_EVENT_STREAM + index as u64);
    match cfg.scenario {
        Scenario::Baseline | Scenario::MovedCamera | Scenario::CbfReplay => Ok(Vec::new()),
        Scenario::NeedleDrop => Ok(vec![ScenarioEvent {
            trigger_step: p.drop_step,
            kind: ScenarioEventKind::DropNeedle,
        }]),
        Scenario::MovedPhantomServo => {
            let mut events = Vec::new();
            let mut step = p.servo_period;
            while step <= p.max_steps as u64 {
                let delta = random_xy_direction(&mut event_rng) * p.servo_move;
                events.push(ScenarioEvent {
                    trigger_step: step,
                    kind: ScenarioEventKind::MovePhantom(Pose::new(delta, Rot6::identity())),
                });
                step += p.servo_period;
            }
            Ok(events)
        }
        Scenario::MovedPhantomPostInsertion => {
            let world = ExecutionWorld {
                state: state.clone(),
                track: cfg.track.clone(),
                events: Vec::new(),
                expert: cfg.expert.clone(),
            };
            let mut probe_rng = RngStream::new(cfg.seed, EVAL_POLICY_STREAM + index as u64);
            let probe = ensemble::execute_policy(
                model,
                &world,
                p.max_steps,
                None,
                None,
                FallbackController::Halt,
                &mut probe_rng,
            )?;
            let center = state.phantom_pose.position;
            let normal = state.phantom_normal();
            let trigger = probe.rows.iter().find(|row| {
                (tip_from_obs(&row.obs) - center).dot(normal) <= -p.post_insertion_depth
            });
            Ok(match trigger {
                Some(row) => {
                    let delta = random_xy_direction(&mut event_rng) * p.post_insertion_move;
                    vec![ScenarioEvent {
                        trigger_step: row.t as u64,
                        kind: ScenarioEventKind::MovePhantom(Pose::new(delta, Rot6::identity())),
                    }]
                }
                None => Vec::new(),
            })
        }
    }
}

// ── scenario execution ──────────────────────────────────────────────────

/// Raw outputs of the offline replay scenario.
#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub rows: Vec<ReplayRow>,
    pub set: EllipsoidSafeSet,
}

/// Everything a scenario run produces before anything touches disk.
#[derive(Debug, Clone)]
pub struct ScenarioArtifacts {
    pub metrics: MetricsReport,
    pub traces: Vec<RolloutTrace>,
    pub replay: Option<ReplayOutput>,
}

/// Run the configured scenario end to end.
///
/// Policy scenarios need a trained ensemble, and a gated run a calibrated
/// in-distribution model; either missing artifact is refused before
/// anything is simulated. The offline replay needs neither.
pub fn run_scenario(
    cfg: &ExperimentConfig,
    model: Option<&EnsembleModel>,
    id_model: Option<&IdModel>,
    opts: &RunOptions,
) -> Result<ScenarioArtifacts> {
    cfg.validate()?;
    if cfg.scenario == Scenario::CbfReplay {
        return run_replay(cfg);
    }
    let model = model.ok_or_else(|| {
        Error::MissingArtifact("trained ensemble (run train first)".into())
    })?;
    let id_model = match (opts.use_gate, id_model) {
        (true, None) => {
            return Err(Error::MissingArtifact(
                "in-distribution calibration (run calibrate first)".into(),
            ))
        }
        (true, Some(m)) => Some(m),
        (false, _) => None,
    };

    let mut traces = Vec::with_capacity(cfg.num_rollouts);
    for i in 0..cfg.num_rollouts {
        let state = scene_for(cfg, i)?;
        let events = events_for(cfg, model, &state, i)?;
        let set = safe_set_for(cfg, &state);
        let world = ExecutionWorld {
            state,
            track: cfg.track.clone(),
            events,
            expert: cfg.expert.clone(),
        };
        let mut gate = match id_model {
            Some(m) => Some(LrtGate::new(m.clone(), cfg.ood.window)?),
            None => None,
        };
        let mut filter = if opts.use_cbf {
            Some(CbfFilter::new(set, cfg.cbf.activation_rule, cfg.track.lambda_track)?)
        } else {
            None
        };
        let mut policy_rng = RngStream::new(cfg.seed, EVAL_POLICY_STREAM + i as u64);
        let trace = ensemble::execute_policy(
            model,
            &world,
            cfg.scenario_params.max_steps,
            gate.as_mut(),
            filter.as_mut(),
            opts.fallback,
            &mut policy_rng,
        )?;
        traces.push(trace);
    }

    let metrics = summarize(cfg.scenario, &traces, opts.use_gate)?;
    Ok(ScenarioArtifacts {
        metrics,
        traces,
        replay: None,
    })
}

/// Aggregate per-rollout traces into the scenario report.
fn summarize(scenario: Scenario, traces: &[RolloutTrace], gated: bool) -> Result<MetricsReport> {
    let n = traces.len();
    if n == 0 {
        return Err(Error::Scenario("no rollouts to summarize".into()));
    }
    let num_success = traces.iter().filter(|t| t.success()).count();
    let mut first_ood: Vec<f64> = traces
        .iter()
        .filter_map(|t| t.handover_step.map(|s| s as f64))
        .collect();
    first_ood.sort_by(f64::total_cmp);
    let num_triggered = first_ood.len();

    let mut min_h: Option<f64> = None;
    let mut steps_filtered = 0usize;
    let mut steps_corrected = 0usize;
    let mut sum_correction = 0.0f64;
    let mut max_correction = 0.0f64;
    for trace in traces {
        for row in &trace.rows {
            if let Some(h) = row.h_value {
                min_h = Some(min_h.map_or(h, |m: f64| m.min(h)));
            }
        }
        if let Some(c) = trace.corrections {
            steps_filtered += c.steps_filtered;
            steps_corrected += c.steps_corrected;
            sum_correction += c.sum_correction;
            max_correction = max_correction.max(c.max_correction);
        }
    }

    let trigger_rate = num_triggered as f64 / n as f64;
    let report = MetricsReport {
        scenario,
        num_rollouts: n,
        num_success,
        success_rate: num_success as f64 / n as f64,
        num_triggered,
        ood_trigger_rate: trigger_rate,
        median_first_ood_step: (num_triggered > 0).then(|| stats::median(&first_ood)),
        false_positive_rate: (gated && scenario == Scenario::Baseline).then_some(trigger_rate),
        min_h,
        min_h_reference: None,
        steps_filtered,
        steps_corrected,
        mean_correction: if steps_filtered == 0 {
            0.0
        } else {
            sum_correction / steps_filtered as f64
        },
        max_correction,
    };
    report.validate()?;
    Ok(report)
}

/// Offline replay: record an expert tip trajectory, cut it two thirds of
/// the way through the insertion, splice on a scripted straight-line
/// escape until the reference is clearly outside the safe set, and track
/// the whole thing through the velocity filter.
fn run_replay(cfg: &ExperimentConfig) -> Result<ScenarioArtifacts> {
    let state = scene_for(cfg, 0)?;
    let set = safe_set_for(cfg, &state);
    let demo = expert::rollout_expert(
        state,
        &cfg.expert,
        &cfg.track,
        cfg.scenario_params.max_steps,
    )?;
    if !demo.success {
        return Err(Error::Scenario(
            "replay reference demonstration did not finish".into(),
        ));
    }
    let tips: Vec<Vec3> = demo.steps.iter().map(|s| tip_from_obs(&s.observation)).collect();

    // Keep only samples once the tip is inside the set, then cut at two
    // thirds of that segment.
    let enter = tips
        .iter()
        .position(|p| set.barrier(*p) >= 0.0)
        .ok_or_else(|| Error::Scenario("reference never enters the safe set".into()))?;
    let inside: Vec<Vec3> = tips[enter..].to_vec();
    let cut = (2 * inside.len()) / 3;
    if cut < 2 {
        return Err(Error::Scenario("too few in-set reference samples to replay".into()));
    }
    let mut reference = inside[..cut].to_vec();

    // Scripted escape: radially outward at the configured speed until the
    // reference barrier is well below zero.
    let last = reference[reference.len() - 1];
    let dir = (last - set.origin)
        .normalized()
        .unwrap_or(Vec3([0.0, 0.0, 1.0]));
    let step = dir * (cfg.scenario_params.replay_escape_speed * cfg.track.dt);
    let mut pos = last;
    for _ in 0..1000 {
        pos = pos + step;
        reference.push(pos);
        if set.barrier(pos) < -0.3 {
            break;
        }
    }

    let rows = cbf::replay(
        &reference,
        set,
        cfg.cbf.activation_rule,
        cfg.track.clone(),
        cfg.cbf.substeps,
    )?;

    let min_h = rows.iter().map(|r| r.h).fold(f64::INFINITY, f64::min);
    let min_h_reference = rows
        .iter()
        .map(|r| set.barrier(r.reference))
        .fold(f64::INFINITY, f64::min);
    let steps_corrected = rows.iter().filter(|r| r.correction > 0.0).count();
    let sum_correction: f64 = rows.iter().map(|r| r.correction).sum();
    let max_correction = rows.iter().map(|r| r.correction).fold(0.0, f64::max);
    let metrics = MetricsReport {
        scenario: Scenario::CbfReplay,
        num_rollouts: 1,
        num_success: 1,
        success_rate: 1.0,
        num_triggered: 0,
        ood_trigger_rate: 0.0,
        median_first_ood_step: None,
        false_positive_rate: None,
        min_h: Some(min_h),
        min_h_reference: Some(min_h_reference),
        steps_filtered: rows.len(),
        steps_corrected,
        mean_correction: sum_correction / rows.len() as f64,
        max_correction,
    };
    metrics.validate()?;
    Ok(ScenarioArtifacts {
        metrics,
        traces: Vec::new(),
        replay: Some(ReplayOutput { rows, set }),
    })
}

// ── calibration ─────────────────────────────────────────────────────────

/// Calibration result: the fitted record plus the pooled raw samples.
#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub record: IdModelFile,
    pub samples: Vec<f64>,
}

/// Fit the in-distribution uncertainty model from ungated, unfiltered
/// nominal rollouts on fresh scenes.
pub fn calibrate(cfg: &ExperimentConfig, model: &EnsembleModel) -> Result<CalibrationOutcome> {
    cfg.validate()?;
    let mut samples = Vec::new();
    for i in 0..cfg.ood.calibration_rollouts {
        let mut scene_rng = RngStream::new(cfg.seed, CALIB_SCENE_STREAM + i as u64);
        let state = cfg.scene.sample(&mut scene_rng)?;
        let world = ExecutionWorld {
            state,
            track: cfg.track.clone(),
            events: Vec::new(),
            expert: cfg.expert.clone(),
        };
        let mut policy_rng = RngStream::new(cfg.seed, CALIB_POLICY_STREAM + i as u64);
        let trace = ensemble::execute_policy(
            model,
            &world,
            cfg.scenario_params.max_steps,
            None,
            None,
            FallbackController::Halt,
            &mut policy_rng,
        )?;
        samples.extend(trace.rows.iter().filter_map(|r| r.sigma_hat));
    }
    let fitted = ood::calibrate_from_samples(&samples, cfg.ood.h, cfg.ood.alpha)?;
    Ok(CalibrationOutcome {
        record: IdModelFile {
            dataset_id: cfg.dataset_dir.to_string_lossy().into_owned(),
            seed: cfg.seed,
            model: fitted,
        },
        samples,
    })
}

// ── training and persistence helpers ────────────────────────────────────

/// Generate the demonstration dataset named by the configuration.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<crate::data::DatasetManifest> {
    cfg.validate()?;
    expert::generate_dataset(
        &cfg.dataset_dir,
        cfg.num_train,
        cfg.num_val,
        cfg.seed,
        &cfg.track,
        &cfg.expert,
        &cfg.scene,
        cfg.scenario_params.max_steps,
    )
}

/// Train the ensemble with the configured member count and overrides.
pub fn train_from_config(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<EnsembleTraining> {
    cfg.validate()?;
    let mut training =
        ensemble::train_ensemble(dataset, &cfg.train, cfg.ensemble.num_members, cfg.seed)?;
    training.model.exec_horizon = cfg.ensemble.exec_horizon.min(training.model.pred_horizon);
    training.model.variance_mode = cfg.ensemble.variance_mode;
    training.model.validate()?;
    Ok(training)
}

/// Write the trained ensemble plus its per-member loss history.
pub fn save_training(dir: &Path, training: &EnsembleTraining) -> Result<()> {
    ensemble::save_ensemble(dir, &training.model, &training.summaries())?;
    write_training_curves(&dir.join(TRAINING_CURVE_FILE), &training.curves)
}

pub fn write_training_curves(path: &Path, curves: &[TrainingCurve]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("member,step,train_loss,val_loss\n");
    for (m, curve) in curves.iter().enumerate() {
        for ((step, train), val) in curve
            .eval_steps
            .iter()
            .zip(&curve.train_losses)
            .zip(&curve.val_losses)
        {
            out.push_str(&format!("{m},{step},{train},{val}\n"));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn id_model_path(model_dir: &Path) -> PathBuf {
    model_dir.join(ID_MODEL_FILE)
}

pub fn calibration_samples_path(model_dir: &Path) -> PathBuf {
    model_dir.join(CALIBRATION_FILE)
}

pub fn trace_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("rollout_{index:03}.csv"))
}

pub fn write_traces(dir: &Path, traces: &[RolloutTrace]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, trace) in traces.iter().enumerate() {
        ensemble::write_trace_csv(&trace_path(dir, i), &trace.rows)?;
    }
    Ok(())
}

/// Load consecutively numbered trace files until the first gap.
pub fn load_traces(dir: &Path) -> Result<Vec<Vec<TraceRow>>> {
    let mut traces = Vec::new();
    for i in 0.. {
        let path = trace_path(dir, i);
        if !path.exists() {
            break;
        }
        traces.push(ensemble::read_trace_csv(&path)?);
    }
    if traces.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "no rollout traces under {}",
            dir.display()
        )));
    }
    Ok(traces)
}

/// Safe-set parameters stored beside the replay rows so charts can be
/// re-drawn without re-running the scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayMeta {
    pub semi_axes: [f64; 3],
    pub origin: [f64; 3],
    pub alpha_cbf: f64,
    pub gamma_d: f64,
}

impl ReplayMeta {
    pub fn from_set(set: &EllipsoidSafeSet) -> ReplayMeta {
        ReplayMeta {
            semi_axes: set.semi_axes,
            origin: set.origin.0,
            alpha_cbf: set.alpha_cbf,
            gamma_d: set.gamma_d,
        }
    }

    pub fn to_set(&self) -> EllipsoidSafeSet {
        EllipsoidSafeSet {
            semi_axes: self.semi_axes,
            origin: Vec3(self.origin),
            alpha_cbf: self.alpha_cbf,
            gamma_d: self.gamma_d,
        }
    }
}

pub fn write_replay_meta(path: &Path, set: &EllipsoidSafeSet) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = toml::to_string_pretty(&ReplayMeta::from_set(set))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_replay_meta(path: &Path) -> Result<EllipsoidSafeSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    let meta: ReplayMeta = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(meta.to_set())
}
