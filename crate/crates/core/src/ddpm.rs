//! Denoising-diffusion engine: noise schedule, forward noising, the noise-
//! prediction training objective, the iterative sampler, and the per-member
//! training loop over normalized observation/action windows.

use serde::{Deserialize, Serialize};

use crate::data::{sample_window, Dataset, Episode, SampleIndex};
use crate::net::{
    eps_input, forward_infer, init_params, Activation, BatchMseGraph, MlpParams, MlpSpec,
    OptimizerState, StepEmbedding,
};
use crate::stats::RngStream;
use crate::{Error, Result};

// ── noise schedule ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Linear,
    SquaredCosine,
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::SquaredCosine => "squared-cosine",
        })
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "squared-cosine" => Ok(ScheduleKind::SquaredCosine),
            other => Err(Error::config("schedule", format!("unknown schedule {other:?}"))),
        }
    }
}

/// Per-step diffusion coefficients: β_k, α_k = 1 − β_k, ᾱ_k = Π_{j≤k} α_j,
/// and the posterior noise scale σ_k (with ᾱ₋₁ taken as 1, so σ_0 = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
        if steps == 0 {
            return Err(Error::config("diffusion_steps", "must be positive"));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|k| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(ScheduleKind::Linear, beta_start, beta_end, betas)
    }

    /// Squared-cosine cumulative-signal schedule with the usual small offset.
    pub fn squared_cosine(steps: usize) -> Result<NoiseSchedule> {
        if steps == 0 {
            return Err(Error::config("diffusion_steps", "must be positive"));
        }
        let s = 0.008;
        let f = |u: f64| ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let abar = |k: isize| {
            if k < 0 {
                1.0
            } else {
                f((k + 1) as f64 / steps as f64) / f(0.0)
            }
        };
        let betas: Vec<f64> = (0..steps as isize)
            .map(|k| (1.0 - abar(k) / abar(k - 1)).clamp(1e-8, 0.999))
            .collect();
        let (beta_start, beta_end) = (betas[0], betas[steps - 1]);
        Self::from_betas(ScheduleKind::SquaredCosine, beta_start, beta_end, betas)
    }

    pub fn from_config(
        kind: ScheduleKind,
        steps: usize,
        beta_start: f64,
        beta_end: f64,
    ) -> Result<NoiseSchedule> {
        match kind {
            ScheduleKind::Linear => Self::linear(steps, beta_start, beta_end),
            ScheduleKind::SquaredCosine => Self::squared_cosine(steps),
        }
    }

    fn from_betas(
        kind: ScheduleKind,
        beta_start: f64,
        beta_end: f64,
        betas: Vec<f64>,
    ) -> Result<NoiseSchedule> {
        if betas.iter().any(|b| *b <= 0.0 || *b >= 1.0) {
            return Err(Error::config("beta", "every beta must lie in (0, 1)"));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("beta", "betas must be non-decreasing"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) || alpha_bars.iter().any(|a| *a <= 0.0) {
            return Err(Error::config("beta", "alpha_bar must decrease strictly within (0, 1]"));
        }
        let posterior_sigmas: Vec<f64> = (0..betas.len())
            .map(|k| {
                let prev = if k == 0 { 1.0 } else { alpha_bars[k - 1] };
                (betas[k] * (1.0 - prev) / (1.0 - alpha_bars[k])).sqrt()
            })
            .collect();
        Ok(NoiseSchedule {
            kind,
            steps: betas.len(),
            beta_start,
            beta_end,
            betas,
            alphas,
            alpha_bars,
            posterior_sigmas,
        })
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    pub fn posterior_sigma(&self, k: usize) -> f64 {
        self.posterior_sigmas[k]
    }
}

// ── forward noising & loss ──────────────────────────────────────────────

/// One training draw: a clean chunk, a diffusion step, the injected noise,
/// and the resulting noisy chunk √ᾱ_k·a0 + √(1−ᾱ_k)·ε.
#[derive(Debug, Clone)]
pub struct DiffusionSample {
    pub a0: Vec<f64>,
    pub k: usize,
    pub noise: Vec<f64>,
    pub noisy: Vec<f64>,
}

/// Noising with caller-provided noise (the rng-driven path delegates here).
pub fn forward_noise_with(schedule: &NoiseSchedule, a0: &[f64], k: usize, noise: Vec<f64>) -> Result<DiffusionSample> {
    if k >= schedule.steps {
        return Err(Error::InvalidCommand(format!(
            "diffusion step {k} out of range (K = {})",
            schedule.steps
        )));
    }
    if noise.len() != a0.len() {
        return Err(Error::DimensionMismatch("noise and chunk lengths differ".into()));
    }
    let signal = schedule.alpha_bar(k).sqrt();
    let spread = (1.0 - schedule.alpha_bar(k)).sqrt();
    let noisy: Vec<f64> = a0
        .iter()
        .zip(&noise)
        .map(|(a, e)| signal * a + spread * e)
        .collect();
    Ok(DiffusionSample {
        a0: a0.to_vec(),
        k,
        noise,
        noisy,
    })
}

pub fn forward_noise(schedule: &NoiseSchedule, a0: &[f64], k: usize, rng: &mut RngStream) -> Result<DiffusionSample> {
    let mut noise = vec![0.0; a0.len()];
    rng.fill_normal(&mut noise);
    forward_noise_with(schedule, a0, k, noise)
}

/// Mean squared error between injected and predicted noise.
pub fn loss_from_prediction(noise: &[f64], predicted: &[f64]) -> f64 {
    let n = noise.len() as f64;
    noise
        .iter()
        .zip(predicted)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

/// The training objective for one sample: predict the injected noise from
/// the noisy chunk and score with elementwise MSE.
pub fn training_loss(
    params: &MlpParams,
    embed: &StepEmbedding,
    sample: &DiffusionSample,
    obs_window_flat: &[f64],
) -> Result<f64> {
    let predicted = crate::net::forward(params, obs_window_flat, &sample.noisy, sample.k, embed)?;
    Ok(loss_from_prediction(&sample.noise, &predicted))
}

// ── sampler ─────────────────────────────────────────────────────────────

/// One reverse-diffusion update a_k → a_{k−1}; `noise` is ignored at k = 0.
pub fn denoise_step(
    schedule: &NoiseSchedule,
    a_k: &[f64],
    predicted_noise: &[f64],
    k: usize,
    noise: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if k >= schedule.steps {
        return Err(Error::InvalidCommand(format!(
            "diffusion step {k} out of range (K = {})",
            schedule.steps
        )));
    }
    if predicted_noise.len() != a_k.len() {
        return Err(Error::DimensionMismatch("predicted noise length differs from chunk".into()));
    }
    let inv_sqrt_alpha = 1.0 / schedule.alpha(k).sqrt();
    let coeff = schedule.beta(k) / (1.0 - schedule.alpha_bar(k)).sqrt();
    let sigma = schedule.posterior_sigma(k);
    let mut out: Vec<f64> = a_k
        .iter()
        .zip(predicted_noise)
        .map(|(a, e)| inv_sqrt_alpha * (a - coeff * e))
        .collect();
    if k > 0 {
        let z = noise.ok_or_else(|| {
            Error::InvalidCommand("denoise_step needs injection noise for k > 0".into())
        })?;
        if z.len() != out.len() {
            return Err(Error::DimensionMismatch("injection noise length differs".into()));
        }
        for (o, zi) in out.iter_mut().zip(z) {
            *o += sigma * zi;
        }
    }
    Ok(out)
}

/// Full reverse pass from a caller-provided start chunk a_K.
pub fn sample_chunk_from(
    params: &MlpParams,
    embed: &StepEmbedding,
    schedule: &NoiseSchedule,
    obs_window_flat: &[f64],
    start: Vec<f64>,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut chunk = start;
    let mut z = vec![0.0; chunk.len()];
    for k in (0..schedule.steps).rev() {
        let predicted = crate::net::forward(params, obs_window_flat, &chunk, k, embed)?;
        let noise = if k > 0 {
            rng.fill_normal(&mut z);
            Some(z.as_slice())
        } else {
            None
        };
        chunk = denoise_step(schedule, &chunk, &predicted, k, noise)?;
    }
    if chunk.iter().any(|v| !v.is_finite()) {
        return Err(Error::Scenario("sampler produced a non-finite chunk".into()));
    }
    Ok(chunk)
}

/// Sample a normalized action chunk conditioned on a normalized observation
/// window, starting from standard Gaussian noise.
pub fn sample_chunk(
    params: &MlpParams,
    embed: &StepEmbedding,
    schedule: &NoiseSchedule,
    obs_window_flat: &[f64],
    chunk_dim: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut start = vec![0.0; chunk_dim];
    rng.fill_normal(&mut start);
    sample_chunk_from(params, embed, schedule, obs_window_flat, start, rng)
}

// ── member training ─────────────────────────────────────────────────────

/// Training-run shape: horizons, architecture, optimizer, schedule, stop rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Optimizer-step ceiling; training may stop earlier on plateau.
    pub max_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Validation cadence in optimizer steps.
    pub eval_every: usize,
    /// Stop after this many consecutive evaluations without improvement.
    pub patience_evals: usize,
    /// Fixed validation draws (windows, steps, and noise frozen per run).
    pub val_samples: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub embed: StepEmbedding,
    pub obs_horizon: usize,
    pub pred_horizon: usize,
    pub schedule_kind: ScheduleKind,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 10_000,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 0.1,
            warmup_steps: 100,
            eval_every: 250,
            patience_evals: 8,
            val_samples: 64,
            hidden_dims: vec![256, 256, 256],
            activation: Activation::Gelu,
            embed: StepEmbedding::default(),
            obs_horizon: 4,
            pred_horizon: 8,
            schedule_kind: ScheduleKind::Linear,
            diffusion_steps: 100,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::config("training", "steps, batch, and cadence must be positive"));
        }
        if self.obs_horizon == 0 || self.pred_horizon == 0 {
            return Err(Error::config("horizons", "must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::from_config(self.schedule_kind, self.diffusion_steps, self.beta_start, self.beta_end)
    }

    pub fn mlp_spec(&self, obs_dim: usize, act_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim: obs_dim * self.obs_horizon + act_dim * self.pred_horizon + self.embed.dim,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: act_dim * self.pred_horizon,
            activation: self.activation,
        }
    }
}

/// Loss history recorded during one member's training run.
#[derive(Debug, Clone, Default)]
pub struct TrainingCurve {
    pub eval_steps: Vec<usize>,
    pub val_losses: Vec<f64>,
    pub train_losses: Vec<f64>,
    pub best_val: f64,
    pub best_step: usize,
    pub stopped_early: bool,
    pub steps_run: usize,
    pub skipped_non_finite: usize,
}

/// One trained diffusion policy: weights plus everything needed to sample.
#[derive(Debug, Clone)]
pub struct TrainedMember {
    pub params: MlpParams,
    pub embed: StepEmbedding,
    pub schedule: NoiseSchedule,
    pub seed: u64,
    pub curve: TrainingCurve,
}

struct NormalizedStore {
    episodes: Vec<Episode>,
}

impl NormalizedStore {
    fn new(dataset: &Dataset, split: &[Episode]) -> NormalizedStore {
        let episodes = split
            .iter()
            .map(|ep| {
                let mut ep = ep.clone();
                for step in &mut ep.steps {
                    step.obs = dataset.manifest.normalization.normalize_obs(&step.obs);
                    step.act = dataset.manifest.normalization.normalize_act(&step.act);
                }
                ep
            })
            .collect();
        NormalizedStore { episodes }
    }

    fn window(&self, episode: usize, t: usize, t_o: usize, t_p: usize) -> Result<FlatSample> {
        let w = sample_window(&self.episodes[episode], t, t_o, t_p)?;
        Ok(FlatSample {
            obs: w.obs_window.iter().flatten().copied().collect(),
            chunk: w.action_chunk.iter().flatten().copied().collect(),
        })
    }
}

/// A training window flattened into the shapes the network consumes.
struct FlatSample {
    obs: Vec<f64>,
    chunk: Vec<f64>,
}

struct ValSample {
    input: Vec<f64>,
    noise: Vec<f64>,
}

/// Train a single diffusion-policy member on the dataset's train split,
/// evaluating on the val split with frozen draws and stopping on plateau.
pub fn train_member(dataset: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TrainedMember> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let obs_dim = crate::sim::OBS_DIM;
    let act_dim = crate::sim::ACTION_DIM;
    let spec = cfg.mlp_spec(obs_dim, act_dim);
    let chunk_dim = act_dim * cfg.pred_horizon;

    let root = RngStream::new(seed, 0);
    let mut init_rng = root.child(1);
    let mut batch_rng = root.child(2);
    let mut noise_rng = root.child(3);
    let mut val_rng = root.child(4);

    let mut params = init_params(&spec, &mut init_rng)?;
    let mut opt = OptimizerState::new(
        cfg.learning_rate,
        cfg.weight_decay,
        cfg.warmup_steps,
        cfg.max_steps,
        &params,
    );
    let mut graph = BatchMseGraph::build(&spec, cfg.batch_size)?;

    let train = NormalizedStore::new(dataset, &dataset.train);
    let val = NormalizedStore::new(dataset, &dataset.val);
    let train_index = SampleIndex::new(&train.episodes);
    let val_index = SampleIndex::new(&val.episodes);

    // Frozen validation draws: window, diffusion step, and noise fixed once.
    let val_set: Vec<ValSample> = (0..cfg.val_samples)
        .map(|_| {
            let (ep, t) = val_index.draw(&mut val_rng);
            let w = val.window(ep, t, cfg.obs_horizon, cfg.pred_horizon)?;
            let k = val_rng.index(schedule.steps);
            let mut noise = vec![0.0; chunk_dim];
            val_rng.fill_normal(&mut noise);
            let sample = forward_noise_with(&schedule, &w.chunk, k, noise)?;
            Ok(ValSample {
                input: eps_input(&w.obs, &sample.noisy, k, &cfg.embed),
                noise: sample.noise,
            })
        })
        .collect::<Result<_>>()?;

    let eval_val = |params: &MlpParams| -> Result<f64> {
        let mut total = 0.0;
        for s in &val_set {
            let predicted = forward_infer(params, &s.input)?;
            total += loss_from_prediction(&s.noise, &predicted);
        }
        Ok(total / val_set.len().max(1) as f64)
    };

    let mut curve = TrainingCurve {
        best_val: f64::INFINITY,
        ..TrainingCurve::default()
    };
    let mut evals_since_best = 0usize;
    let mut noise_buf = vec![0.0; chunk_dim];

    for step in 0..cfg.max_steps {
        graph.load_params(&params)?;
        for b in 0..cfg.batch_size {
            let (ep, t) = train_index.draw(&mut batch_rng);
            let w = train.window(ep, t, cfg.obs_horizon, cfg.pred_horizon)?;
            let k = noise_rng.index(schedule.steps);
            noise_rng.fill_normal(&mut noise_buf);
            let sample = forward_noise_with(&schedule, &w.chunk, k, noise_buf.clone())?;
            let input = eps_input(&w.obs, &sample.noisy, k, &cfg.embed);
            graph.graph.set_leaf(graph.inputs[b], &input)?;
            graph.graph.set_leaf(graph.targets[b], &sample.noise)?;
        }
        let loss = graph.loss_and_grads()?;
        let grads: Vec<&[f64]> = graph
            .param_nodes
            .iter()
            .map(|n| graph.graph.grad(*n))
            .collect();
        opt.apply(&mut params, &grads)?;
        if params.tensors.iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Scenario(format!(
                "parameters became non-finite at optimizer step {step}"
            )));
        }
        curve.steps_run = step + 1;

        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps {
            let val_loss = eval_val(&params)?;
            curve.eval_steps.push(step + 1);
            curve.val_losses.push(val_loss);
            curve.train_losses.push(loss);
            if val_loss < curve.best_val - 1e-6 {
                curve.best_val = val_loss;
                curve.best_step = step + 1;
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= cfg.patience_evals {
                    curve.stopped_early = true;
                    break;
                }
            }
        }
    }
    curve.skipped_non_finite = opt.skipped_non_finite;

    Ok(TrainedMember {
        params,
        embed: cfg.embed,
        schedule,
        seed,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule_default() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap()
    }

    #[test]
    fn coefficient_identities_hold() {
        for sched in [schedule_default(), NoiseSchedule::squared_cosine(100).unwrap()] {
            for k in 0..sched.steps {
                assert!((sched.alpha(k) - (1.0 - sched.beta(k))).abs() < 1e-15);
                let prev = if k == 0 { 1.0 } else { sched.alpha_bar(k - 1) };
                assert!(
                    (sched.alpha_bar(k) - prev * sched.alpha(k)).abs() < 1e-12,
                    "k = {k}"
                );
                let sigma_sq = sched.beta(k) * (1.0 - prev) / (1.0 - sched.alpha_bar(k));
                assert!((sched.posterior_sigma(k).powi(2) - sigma_sq).abs() < 1e-12);
            }
            assert_eq!(sched.posterior_sigma(0), 0.0);
            assert!(sched.alpha_bar(0) > 0.99, "alpha_bar_0 close to 1");
            for k in 1..sched.steps {
                assert!(sched.alpha_bar(k) < sched.alpha_bar(k - 1));
                assert!(sched.beta(k) >= sched.beta(k - 1));
            }
        }
    }

    #[test]
    fn linear_schedule_endpoints_match_config() {
        let s = schedule_default();
        assert_eq!(s.beta(0), 1e-4);
        assert_eq!(s.beta(99), 2e-2);
    }

    #[test]
    fn injected_zero_noise_scales_the_chunk() {
        let s = schedule_default();
        let a0 = vec![0.3, -0.7, 1.1];
        let k = 40;
        let sample = forward_noise_with(&s, &a0, k, vec![0.0; 3]).unwrap();
        let signal = s.alpha_bar(k).sqrt();
        for (n, a) in sample.noisy.iter().zip(&a0) {
            assert!((n - signal * a).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_noise_matches_monte_carlo_moments() {
        let s = schedule_default();
        let a0 = vec![0.5, -0.25];
        let k = 60;
        let n = 100_000usize;
        let mut rng = RngStream::new(99, 0);
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let sample = forward_noise(&s, &a0, k, &mut rng).unwrap();
            for d in 0..2 {
                sums[d] += sample.noisy[d];
                sq[d] += sample.noisy[d] * sample.noisy[d];
            }
        }
        let var_expected = 1.0 - s.alpha_bar(k);
        for d in 0..2 {
            let mean = sums[d] / n as f64;
            let var = sq[d] / n as f64 - mean * mean;
            let mean_expected = s.alpha_bar(k).sqrt() * a0[d];
            let se_mean = (var_expected / n as f64).sqrt();
            let se_var = var_expected * (2.0 / n as f64).sqrt();
            assert!(
                (mean - mean_expected).abs() < 3.0 * se_mean,
                "dim {d}: mean {mean} vs {mean_expected}"
            );
            assert!(
                (var - var_expected).abs() < 3.0 * se_var,
                "dim {d}: var {var} vs {var_expected}"
            );
        }
    }

    #[test]
    fn perfect_prediction_gives_zero_loss_and_offset_gives_c_squared() {
        let noise = vec![0.4, -1.2, 0.9, 0.0];
        assert_eq!(loss_from_prediction(&noise, &noise), 0.0);
        let c = 0.37;
        let off: Vec<f64> = noise.iter().map(|v| v + c).collect();
        assert!((loss_from_prediction(&noise, &off) - c * c).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_reimplemented_mse() {
        let mut rng = RngStream::new(5, 0);
        let a: Vec<f64> = (0..80).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..80).map(|_| rng.normal()).collect();
        let oracle: f64 = {
            let mut acc = 0.0;
            for i in 0..80 {
                let d = a[i] - b[i];
                acc += d * d;
            }
            acc / 80.0
        };
        assert!((loss_from_prediction(&a, &b) - oracle).abs() < 1e-15);
    }

    #[test]
    fn single_step_schedule_divides_by_sqrt_alpha() {
        let s = NoiseSchedule::linear(1, 0.04, 0.04).unwrap();
        let x = vec![0.8, -0.3, 0.1];
        let zeros = vec![0.0; 3];
        let out = denoise_step(&s, &x, &zeros, 0, None).unwrap();
        let expected = 1.0 / (1.0f64 - 0.04).sqrt();
        for (o, xi) in out.iter().zip(&x) {
            assert!((o - xi * expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sampling_is_deterministic_under_a_fixed_seed() {
        let s = schedule_default();
        let spec = MlpSpec {
            input_dim: 8 + 6 + 32,
            hidden_dims: vec![16],
            output_dim: 6,
            activation: Activation::Gelu,
        };
        let params = init_params(&spec, &mut RngStream::new(7, 0)).unwrap();
        let embed = StepEmbedding::default();
        let obs = vec![0.1; 8];
        let a = sample_chunk(&params, &embed, &s, &obs, 6, &mut RngStream::new(11, 3)).unwrap();
        let b = sample_chunk(&params, &embed, &s, &obs, 6, &mut RngStream::new(11, 3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn degenerate_schedules_are_rejected() {
        assert!(NoiseSchedule::linear(0, 1e-4, 2e-2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.5).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 0.1).is_err()); // decreasing betas
        assert!(NoiseSchedule::linear(10, 0.5, 1.2).is_err());
    }

    #[test]
    fn training_loss_is_zero_when_net_reproduces_noise_exactly() {
        // Zero-parameter net predicts exactly zero; inject zero noise.
        let s = schedule_default();
        let embed = StepEmbedding::default();
        let spec = MlpSpec {
            input_dim: 4 + 6 + 32,
            hidden_dims: vec![8],
            output_dim: 6,
            activation: Activation::Gelu,
        };
        let mut params = init_params(&spec, &mut RngStream::new(3, 0)).unwrap();
        for t in &mut params.tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let sample = forward_noise_with(&s, &[0.2, -0.1, 0.4, 0.0, 0.3, -0.5], 10, vec![0.0; 6]).unwrap();
        let loss = training_loss(&params, &embed, &sample, &[0.5; 4]).unwrap();
        assert_eq!(loss, 0.0);
    }
}
