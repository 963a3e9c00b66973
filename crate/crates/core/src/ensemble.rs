//! Policy ensemble: independently seeded diffusion policies over one
//! dataset, action-sequence aggregation (mean executed, across-member
//! variance as the uncertainty signal), and the receding-horizon execution
//! loop with optional uncertainty gate and velocity safety filter.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cbf::CbfFilter;
use crate::data::{Dataset, Normalizer};
use crate::ddpm::{self, NoiseSchedule, ScheduleKind, TrainConfig, TrainingCurve};
use crate::error::Error;
use crate::expert::{self, ExpertCommand, ExpertParams, Phase};
use crate::net::{self, StepEmbedding, WeightFileMeta};
use crate::sim::{
    self, ScenarioEvent, SimState, Vec3, VelocityTrackingParams, ACTION_DIM, OBS_DIM,
};
use crate::stats::RngStream;
use crate::Result;

/// Default number of policies in the ensemble.
pub const DEFAULT_NUM_MEMBERS: usize = 4;

/// Default number of predicted steps executed before re-predicting.
pub const DEFAULT_T_A: usize = 4;

// ── model ───────────────────────────────────────────────────────────────

/// Divisor used for the across-member variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// Divide by N: the ensemble is read as an equal-weight mixture and the
    /// variance is the mixture's second central moment at the sample level.
    #[default]
    Population,
    /// Divide by N − 1 (unbiased single-Gaussian estimate).
    Sample,
}

/// One trained policy: weights plus everything needed to sample from it.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub params: net::MlpParams,
    pub embed: StepEmbedding,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

/// Independently seeded policies sharing one architecture, noise schedule,
/// and dataset normalizer.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub members: Vec<EnsembleMember>,
    pub normalizer: Normalizer,
    /// Observation steps fed to each policy.
    pub obs_horizon: usize,
    /// Action steps each policy predicts.
    pub pred_horizon: usize,
    /// Predicted steps actually executed before re-predicting.
    pub exec_horizon: usize,
    pub variance_mode: VarianceMode,
}

impl EnsembleModel {
    /// Assemble and validate a model from trained members.
    pub fn from_members(
        members: Vec<EnsembleMember>,
        normalizer: Normalizer,
        obs_horizon: usize,
        pred_horizon: usize,
        exec_horizon: usize,
        variance_mode: VarianceMode,
    ) -> Result<EnsembleModel> {
        let model = EnsembleModel {
            members,
            normalizer,
            obs_horizon,
            pred_horizon,
            exec_horizon,
            variance_mode,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    /// Flattened length of one predicted action sequence.
    pub fn chunk_dim(&self) -> usize {
        self.pred_horizon * ACTION_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::config(
                "ensemble.members",
                "need at least two members",
            ));
        }
        if self.obs_horizon == 0 || self.pred_horizon == 0 {
            return Err(Error::config("ensemble.horizons", "horizons must be positive"));
        }
        if self.exec_horizon == 0 || self.exec_horizon > self.pred_horizon {
            return Err(Error::config(
                "ensemble.exec_horizon",
                "executed steps must lie in [1, predicted steps]",
            ));
        }
        let first = &self.members[0];
        let expected_in =
            self.obs_horizon * OBS_DIM + self.chunk_dim() + first.embed.dim;
        if first.params.spec.input_dim != expected_in
            || first.params.spec.output_dim != self.chunk_dim()
        {
            return Err(Error::config(
                "ensemble.architecture",
                "member network dimensions do not match the horizons",
            ));
        }
        for (i, m) in self.members.iter().enumerate() {
            if m.params.spec != first.params.spec {
                return Err(Error::config(
                    "ensemble.members",
                    format!("member {i} architecture differs from member 0"),
                ));
            }
            if m.embed.dim != first.embed.dim {
                return Err(Error::config(
                    "ensemble.members",
                    format!("member {i} step embedding differs from member 0"),
                ));
            }
            if m.schedule.kind != first.schedule.kind
                || m.schedule.steps != first.schedule.steps
                || m.schedule.beta_start != first.schedule.beta_start
                || m.schedule.beta_end != first.schedule.beta_end
            {
                return Err(Error::config(
                    "ensemble.members",
                    format!("member {i} noise schedule differs from member 0"),
                ));
            }
        }
        let mut seeds: Vec<u64> = self.members.iter().map(|m| m.seed).collect();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config(
                "ensemble.seeds",
                "member seeds must be pairwise distinct",
            ));
        }
        self.normalizer.validate()?;
        Ok(())
    }
}

// ── training ────────────────────────────────────────────────────────────

/// Output of an ensemble training run: the model plus per-member curves.
#[derive(Debug, Clone)]
pub struct EnsembleTraining {
    pub model: EnsembleModel,
    pub curves: Vec<TrainingCurve>,
}

/// Per-member training record persisted alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberSummary {
    pub seed: u64,
    pub best_val: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
}

impl EnsembleTraining {
    pub fn summaries(&self) -> Vec<MemberSummary> {
        self.model
            .members
            .iter()
            .zip(&self.curves)
            .map(|(m, c)| MemberSummary {
                seed: m.seed,
                best_val: c.best_val,
                steps_run: c.steps_run,
                stopped_early: c.stopped_early,
            })
            .collect()
    }
}

/// Largest member validation loss divided by the smallest; a diverged
/// member shows up as a spread well above 2.
pub fn validation_spread(curves: &[TrainingCurve]) -> Option<f64> {
    let best = curves.iter().map(|c| c.best_val).fold(f64::INFINITY, f64::min);
    let worst = curves
        .iter()
        .map(|c| c.best_val)
        .fold(f64::NEG_INFINITY, f64::max);
    if curves.is_empty() || best <= 0.0 {
        return None;
    }
    Some(worst / best)
}

/// Train members with consecutive seeds `base_seed + i`.
pub fn train_ensemble(
    dataset: &Dataset,
    cfg: &TrainConfig,
    num_members: usize,
    base_seed: u64,
) -> Result<EnsembleTraining> {
    let seeds: Vec<u64> = (0..num_members)
        .map(|i| base_seed.wrapping_add(i as u64))
        .collect();
    train_ensemble_with_seeds(dataset, cfg, &seeds)
}

/// Train one member per seed; seeds must be pairwise distinct.
pub fn train_ensemble_with_seeds(
    dataset: &Dataset,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<EnsembleTraining> {
    if seeds.len() < 2 {
        return Err(Error::config(
            "ensemble.seeds",
            "need at least two members",
        ));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config(
            "ensemble.seeds",
            "member seeds must be pairwise distinct",
        ));
    }
    cfg.validate()?;

    let mut members = Vec::with_capacity(seeds.len());
    let mut curves = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let trained = ddpm::train_member(dataset, cfg, seed).map_err(|e| {
            Error::Scenario(format!("ensemble member {i} (seed {seed}) failed: {e}"))
        })?;
        curves.push(trained.curve);
        members.push(EnsembleMember {
            params: trained.params,
            embed: trained.embed,
            schedule: trained.schedule,
            seed,
        });
    }
    let model = EnsembleModel::from_members(
        members,
        dataset.manifest.normalization.clone(),
        cfg.obs_horizon,
        cfg.pred_horizon,
        DEFAULT_T_A.min(cfg.pred_horizon),
        VarianceMode::Population,
    )?;
    Ok(EnsembleTraining { model, curves })
}

// ── prediction & aggregation ────────────────────────────────────────────

/// All member action sequences plus their aggregates, in world units.
#[derive(Debug, Clone)]
pub struct EnsemblePrediction {
    /// One denormalized action sequence per member.
    pub sequences: Vec<Vec<[f64; ACTION_DIM]>>,
    /// Elementwise mean sequence; this is what gets executed.
    pub mean_seq: Vec<[f64; ACTION_DIM]>,
    /// Per-timestep per-dimension variance across members.
    pub var_seq: Vec<[f64; ACTION_DIM]>,
    /// Per-timestep scalar uncertainty: max over dims of |variance|.
    pub sigma_hat: Vec<f64>,
}

impl EnsemblePrediction {
    /// Aggregate member sequences into mean, variance, and the per-step
    /// uncertainty scalar.
    pub fn aggregate(
        sequences: Vec<Vec<[f64; ACTION_DIM]>>,
        mode: VarianceMode,
    ) -> Result<EnsemblePrediction> {
        let n = sequences.len();
        if n < 2 {
            return Err(Error::DimensionMismatch(
                "aggregation needs at least two member sequences".into(),
            ));
        }
        let horizon = sequences[0].len();
        if horizon == 0 || sequences.iter().any(|s| s.len() != horizon) {
            return Err(Error::DimensionMismatch(
                "member sequences must share one non-empty horizon".into(),
            ));
        }
        let divisor = match mode {
            VarianceMode::Population => n as f64,
            VarianceMode::Sample => (n - 1) as f64,
        };
        let mut mean_seq = vec![[0.0; ACTION_DIM]; horizon];
        let mut var_seq = vec![[0.0; ACTION_DIM]; horizon];
        let mut sigma_hat = vec![0.0; horizon];
        let mut column = vec![0.0; n];
        for t in 0..horizon {
            for d in 0..ACTION_DIM {
                // Summing in sorted order makes the aggregates bitwise
                // independent of member ordering.
                for (slot, seq) in column.iter_mut().zip(&sequences) {
                    *slot = seq[t][d];
                }
                column.sort_unstable_by(f64::total_cmp);
                mean_seq[t][d] = column.iter().sum::<f64>() / n as f64;
                for slot in column.iter_mut() {
                    let diff = *slot - mean_seq[t][d];
                    *slot = diff * diff;
                }
                column.sort_unstable_by(f64::total_cmp);
                var_seq[t][d] = column.iter().sum::<f64>() / divisor;
            }
            sigma_hat[t] = var_seq[t]
                .iter()
                .map(|v| v.abs())
                .fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(EnsemblePrediction {
            sequences,
            mean_seq,
            var_seq,
            sigma_hat,
        })
    }
}

impl EnsembleModel {
    /// Sample one action sequence per member and aggregate.
    ///
    /// `obs_window_norm` is the flattened, already-normalized observation
    /// window; `rngs` supplies one stream per member.
    pub fn predict(
        &self,
        obs_window_norm: &[f64],
        rngs: &mut [RngStream],
    ) -> Result<EnsemblePrediction> {
        if obs_window_norm.len() != self.obs_horizon * OBS_DIM {
            return Err(Error::DimensionMismatch(format!(
                "observation window has {} values, expected {}",
                obs_window_norm.len(),
                self.obs_horizon * OBS_DIM
            )));
        }
        if rngs.len() != self.members.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rng streams for {} members",
                rngs.len(),
                self.members.len()
            )));
        }
        let mut sequences = Vec::with_capacity(self.members.len());
        for (i, (member, rng)) in self.members.iter().zip(rngs.iter_mut()).enumerate() {
            let chunk = ddpm::sample_chunk(
                &member.params,
                &member.embed,
                &member.schedule,
                obs_window_norm,
                self.chunk_dim(),
                rng,
            )
            .map_err(|e| Error::Scenario(format!("ensemble member {i} sampling failed: {e}")))?;
            let mut seq = Vec::with_capacity(self.pred_horizon);
            for t in 0..self.pred_horizon {
                let mut a = [0.0; ACTION_DIM];
                a.copy_from_slice(&chunk[t * ACTION_DIM..(t + 1) * ACTION_DIM]);
                seq.push(self.normalizer.denormalize_act(&a));
            }
            sequences.push(seq);
        }
        EnsemblePrediction::aggregate(sequences, self.variance_mode)
    }
}

/// Flatten and normalize the trailing `t_o` observations, repeating the
/// earliest available observation when history is still shorter.
pub fn normalized_window(
    history: &[[f64; OBS_DIM]],
    t_o: usize,
    normalizer: &Normalizer,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_o * OBS_DIM);
    for i in 0..t_o {
        let idx = (history.len() + i).saturating_sub(t_o).min(history.len() - 1);
        out.extend_from_slice(&normalizer.normalize_obs(&history[idx]));
    }
    out
}

// ── execution loop ──────────────────────────────────────────────────────

/// Controller that takes over after an uncertainty handover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackController {
    /// Command zero velocity and hold the gripper.
    #[default]
    Halt,
    /// Hand control to the scripted demonstrator (falls back to halting
    /// whenever the demonstrator itself cannot act, e.g. needle lost).
    Expert,
}

/// World bundle the execution loop runs against.
#[derive(Debug, Clone)]
pub struct ExecutionWorld {
    pub state: SimState,
    pub track: VelocityTrackingParams,
    /// Mid-rollout perturbations, applied after the trigger step's
    /// observation has been taken.
    pub events: Vec<ScenarioEvent>,
    /// Scene-phase classification and fallback-demonstrator parameters.
    pub expert: ExpertParams,
}

/// How a rollout ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutOutcome {
    /// Needle tip reached the exit point.
    Done,
    /// Step budget exhausted.
    Timeout,
    /// Uncertainty handover with the halting fallback.
    Halted,
}

impl std::fmt::Display for RolloutOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RolloutOutcome::Done => "DONE",
            RolloutOutcome::Timeout => "TIMEOUT",
            RolloutOutcome::Halted => "HALTED",
        };
        f.write_str(s)
    }
}

/// One executed step of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    /// Observation the controller acted from.
    pub obs: [f64; OBS_DIM],
    /// Pose-target action actually pursued (after any safety filtering).
    pub act_exec: [f64; ACTION_DIM],
    /// Uncertainty of this step's prediction; absent after handover.
    pub sigma_hat: Option<f64>,
    /// Gate verdict; absent without a gate or after handover.
    pub ood_flag: Option<bool>,
    /// Barrier value at the filtered point; absent without a filter.
    pub h_value: Option<f64>,
    pub phase: Phase,
}

/// Aggregate effect of the safety filter over one rollout.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CorrectionStats {
    /// Steps on which the filter was consulted.
    pub steps_filtered: usize,
    /// Steps on which it changed the commanded linear velocity.
    pub steps_corrected: usize,
    /// Sum over steps of the correction magnitude (m/s).
    pub sum_correction: f64,
    /// Largest single-step correction magnitude (m/s).
    pub max_correction: f64,
}

impl CorrectionStats {
    fn record(&mut self, delta: f64) {
        self.steps_filtered += 1;
        if delta > 0.0 {
            self.steps_corrected += 1;
        }
        self.sum_correction += delta;
        self.max_correction = self.max_correction.max(delta);
    }

    pub fn mean_correction(&self) -> f64 {
        if self.steps_filtered == 0 {
            0.0
        } else {
            self.sum_correction / self.steps_filtered as f64
        }
    }
}

/// A complete policy rollout.
#[derive(Debug, Clone)]
pub struct RolloutTrace {
    pub rows: Vec<TraceRow>,
    pub outcome: RolloutOutcome,
    /// Step at which control switched to the fallback, if it did.
    pub handover_step: Option<usize>,
    pub prediction_calls: usize,
    /// Filter impact; present exactly when a filter was supplied.
    pub corrections: Option<CorrectionStats>,
    pub final_state: SimState,
}

impl RolloutTrace {
    pub fn success(&self) -> bool {
        self.outcome == RolloutOutcome::Done
    }
}

fn phase_or(state: &SimState, params: &ExpertParams, prev: Phase) -> Phase {
    expert::phase_of(state, params).unwrap_or(prev)
}

/// Zero-velocity command that keeps the gripper where it is.
fn halt_command(state: &SimState) -> (Vec3, [f64; 6], f64) {
    (Vec3::ZERO, [0.0; 6], state.gripper)
}

fn fallback_command(
    state: &SimState,
    world: &ExecutionWorld,
    fallback: FallbackController,
) -> (Vec3, [f64; 6], f64) {
    match fallback {
        FallbackController::Halt => halt_command(state),
        FallbackController::Expert => match expert::expert_action(state, &world.expert, &world.track)
        {
            Ok(cmd) => (cmd.desired_velocity, cmd.desired_rot6_rate, cmd.gripper_cmd),
            Err(_) => halt_command(state),
        },
    }
}

/// Run the ensemble against a world under a step budget.
///
/// Each chunk boundary predicts `pred_horizon` steps and executes
/// `exec_horizon` of the mean sequence, converting each absolute pose
/// target into velocities against the current state. When a gate is
/// supplied, its per-step verdict on the uncertainty scalar triggers the
/// fallback controller; when a filter is supplied, the linear velocity of
/// every command — fallback included — passes through it (the filter
/// constrains the held needle tip's commanded linear velocity; rotational
/// tip motion is outside its interface).
pub fn execute_policy(
    model: &EnsembleModel,
    world: &ExecutionWorld,
    steps: usize,
    mut gate: Option<&mut crate::ood::LrtGate>,
    mut filter: Option<&mut CbfFilter>,
    fallback: FallbackController,
    rng: &mut RngStream,
) -> Result<RolloutTrace> {
    model.validate()?;
    world.track.validate()?;
    if let Some(f) = filter.as_deref() {
        if world.track.lambda_track <= f.set.alpha_cbf {
            return Err(Error::config(
                "cbf.alpha_cbf",
                "tracking gain must exceed the barrier gain",
            ));
        }
    }

    let mut corrections: Option<CorrectionStats> =
        filter.as_deref().map(|_| CorrectionStats::default());
    let mut state = world.state.clone();
    let mut history: Vec<[f64; OBS_DIM]> = vec![sim::observe(&state).flat()];
    let mut member_rngs: Vec<RngStream> = (0..model.members.len())
        .map(|i| rng.child(1 + i as u64))
        .collect();

    let mut rows = Vec::new();
    let mut outcome = RolloutOutcome::Timeout;
    let mut handover: Option<usize> = None;
    let mut prediction_calls = 0usize;
    let mut current: Option<EnsemblePrediction> = None;
    let mut phase = phase_or(&state, &world.expert, Phase::Approach);

    if phase == Phase::Done {
        return Ok(RolloutTrace {
            rows,
            outcome: RolloutOutcome::Done,
            handover_step: None,
            prediction_calls: 0,
            corrections,
            final_state: state,
        });
    }

    for t in 0..steps {
        let mut row_sigma = None;
        let mut row_ood = None;

        let (v_des, rot_rate, gripper) = if handover.is_none() {
            if t % model.exec_horizon == 0 {
                let window = normalized_window(&history, model.obs_horizon, &model.normalizer);
                current = Some(model.predict(&window, &mut member_rngs)?);
                prediction_calls += 1;
            }
            let pred = current
                .as_ref()
                .expect("a prediction exists while autonomous");
            let j = t % model.exec_horizon;
            let sigma = pred.sigma_hat[j];
            row_sigma = Some(sigma);
            let mut fired = false;
            if let Some(g) = gate.as_deref_mut() {
                let verdict = g.check(sigma);
                row_ood = Some(verdict.is_ood);
                fired = verdict.is_ood;
            }
            if fired {
                handover = Some(t);
                fallback_command(&state, world, fallback)
            } else {
                let action = pred.mean_seq[j];
                expert::action_to_command(&state, &action, world.track.dt)
            }
        } else {
            fallback_command(&state, world, fallback)
        };

        // Safety-filter the linear velocity at the constrained point.
        let mut v_exec = v_des;
        let mut h_value = None;
        if let Some(f) = filter.as_deref_mut() {
            let point = state.filtered_point();
            f.update_activation(point);
            v_exec = f.safe_velocity(point, v_des)?;
            h_value = Some(f.set.barrier(point));
            if let Some(c) = corrections.as_mut() {
                c.record((v_exec - v_des).norm());
            }
        }

        let act_exec = expert::command_to_action(
            &state,
            &ExpertCommand {
                desired_velocity: v_exec,
                desired_rot6_rate: rot_rate,
                gripper_cmd: gripper,
                phase,
            },
            world.track.dt,
        );
        rows.push(TraceRow {
            t,
            obs: *history.last().expect("history starts non-empty"),
            act_exec,
            sigma_hat: row_sigma,
            ood_flag: row_ood,
            h_value,
            phase,
        });

        // Perturbations trigger after this step's observation was taken.
        for event in &world.events {
            if event.trigger_step == t as u64 {
                state = sim::apply_scenario_event(&state, event);
            }
        }

        state = sim::step(&state, v_exec, &rot_rate, gripper, &world.track)?;
        history.push(sim::observe(&state).flat());
        phase = phase_or(&state, &world.expert, phase);

        if phase == Phase::Done {
            outcome = RolloutOutcome::Done;
            break;
        }
        if handover == Some(t) && fallback == FallbackController::Halt {
            outcome = RolloutOutcome::Halted;
            break;
        }
    }

    Ok(RolloutTrace {
        rows,
        outcome,
        handover_step: handover,
        prediction_calls,
        corrections,
        final_state: state,
    })
}

// ── trace CSV ───────────────────────────────────────────────────────────

/// Column header for rollout trace files.
pub fn trace_header() -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..OBS_DIM).map(|i| format!("obs_{i}")));
    cols.extend((0..ACTION_DIM).map(|i| format!("act_exec_{i}")));
    cols.push("sigma_hat".into());
    cols.push("ood_flag".into());
    cols.push("h_value".into());
    cols.push("phase".into());
    cols.join(",")
}

/// Write a rollout trace; optional fields stay empty.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut text = trace_header();
    text.push('\n');
    for row in rows {
        let mut line = format!("{}", row.t);
        for v in &row.obs {
            let _ = write!(line, ",{v}");
        }
        for v in &row.act_exec {
            let _ = write!(line, ",{v}");
        }
        match row.sigma_hat {
            Some(s) => {
                let _ = write!(line, ",{s}");
            }
            None => line.push(','),
        }
        match row.ood_flag {
            Some(flag) => {
                let _ = write!(line, ",{}", u8::from(flag));
            }
            None => line.push(','),
        }
        match row.h_value {
            Some(h) => {
                let _ = write!(line, ",{h}");
            }
            None => line.push(','),
        }
        let _ = write!(line, ",{}", row.phase);
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Read back a rollout trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty trace file"))?;
    if header != trace_header() {
        return Err(Error::parse(path, "unexpected trace header"));
    }
    let expected = 1 + OBS_DIM + ACTION_DIM + 4;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(Error::parse(
                path,
                format!("line {}: {} fields, expected {expected}", lineno + 2, fields.len()),
            ));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 2)))
        };
        let opt_num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let t = fields[0]
            .parse::<usize>()
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 2)))?;
        let mut obs = [0.0; OBS_DIM];
        for (d, slot) in obs.iter_mut().enumerate() {
            *slot = num(fields[1 + d])?;
        }
        let mut act_exec = [0.0; ACTION_DIM];
        for (d, slot) in act_exec.iter_mut().enumerate() {
            *slot = num(fields[1 + OBS_DIM + d])?;
        }
        let base = 1 + OBS_DIM + ACTION_DIM;
        let sigma_hat = opt_num(fields[base])?;
        let ood_flag = match fields[base + 1] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => {
                return Err(Error::parse(
                    path,
                    format!("line {}: bad ood flag {other:?}", lineno + 2),
                ))
            }
        };
        let h_value = opt_num(fields[base + 2])?;
        let phase = Phase::from_str(fields[base + 3])
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 2)))?;
        rows.push(TraceRow {
            t,
            obs,
            act_exec,
            sigma_hat,
            ood_flag,
            h_value,
            phase,
        });
    }
    Ok(rows)
}

// ── persistence ─────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleFile {
    num_members: usize,
    obs_horizon: usize,
    pred_horizon: usize,
    exec_horizon: usize,
    variance_mode: VarianceMode,
    normalization: Normalizer,
    members: Vec<MemberSummary>,
}

/// Weight file for one member inside an ensemble directory.
pub fn member_weight_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("member_{index}.w64"))
}

/// Manifest describing the ensemble directory.
pub fn ensemble_manifest_path(dir: &Path) -> PathBuf {
    dir.join("ensemble.toml")
}

/// Persist the model: one weight file per member plus a manifest.
pub fn save_ensemble(
    dir: &Path,
    model: &EnsembleModel,
    summaries: &[MemberSummary],
) -> Result<()> {
    model.validate()?;
    if summaries.len() != model.members.len() {
        return Err(Error::config(
            "ensemble.members",
            "one summary per member required",
        ));
    }
    std::fs::create_dir_all(dir)?;
    for (i, m) in model.members.iter().enumerate() {
        let meta = WeightFileMeta {
            seed: m.seed,
            embed_dim: m.embed.dim,
            schedule_kind: m.schedule.kind.to_string(),
            diffusion_steps: m.schedule.steps,
            beta_start: m.schedule.beta_start,
            beta_end: m.schedule.beta_end,
        };
        net::save_weights(&member_weight_path(dir, i), &m.params, &meta)?;
    }
    let file = EnsembleFile {
        num_members: model.members.len(),
        obs_horizon: model.obs_horizon,
        pred_horizon: model.pred_horizon,
        exec_horizon: model.exec_horizon,
        variance_mode: model.variance_mode,
        normalization: model.normalizer.clone(),
        members: summaries.to_vec(),
    };
    let text = toml::to_string_pretty(&file)?;
    std::fs::write(ensemble_manifest_path(dir), text)?;
    Ok(())
}

/// Load a persisted ensemble and its per-member training summaries.
pub fn load_ensemble(dir: &Path) -> Result<(EnsembleModel, Vec<MemberSummary>)> {
    let manifest = ensemble_manifest_path(dir);
    let text = std::fs::read_to_string(&manifest).map_err(|_| {
        Error::MissingArtifact(format!("ensemble manifest {}", manifest.display()))
    })?;
    let file: EnsembleFile = toml::from_str(&text)?;
    if file.members.len() != file.num_members {
        return Err(Error::parse(
            &manifest,
            "member summary count disagrees with num_members",
        ));
    }
    let mut members = Vec::with_capacity(file.num_members);
    for i in 0..file.num_members {
        let (params, meta) = net::load_weights(&member_weight_path(dir, i))?;
        let kind = ScheduleKind::from_str(&meta.schedule_kind)?;
        let schedule =
            NoiseSchedule::from_config(kind, meta.diffusion_steps, meta.beta_start, meta.beta_end)?;
        members.push(EnsembleMember {
            params,
            embed: StepEmbedding { dim: meta.embed_dim },
            schedule,
            seed: meta.seed,
        });
    }
    let model = EnsembleModel::from_members(
        members,
        file.normalization,
        file.obs_horizon,
        file.pred_horizon,
        file.exec_horizon,
        file.variance_mode,
    )?;
    Ok((model, file.members))
}
