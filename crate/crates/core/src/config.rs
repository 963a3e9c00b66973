//! Run configuration: one TOML file of nested sections with full defaults,
//! every field overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cbf::ActivationRule;
use crate::ddpm::TrainConfig;
use crate::ensemble::{FallbackController, VarianceMode};
use crate::error::Error;
use crate::expert::{ExpertParams, SceneDistribution};
use crate::sim::VelocityTrackingParams;
use crate::Result;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SUTURE_SAFE_OUT";

/// The runnable experiment scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// In-distribution rollouts; doubles as the false-positive probe.
    Baseline,
    /// The needle is released mid-run and falls.
    NeedleDrop,
    /// Camera sampled from an angular band disjoint from training.
    MovedCamera,
    /// Small periodic phantom moves the policy should absorb.
    MovedPhantomServo,
    /// One large phantom move after the needle is below the surface.
    MovedPhantomPostInsertion,
    /// Offline safety-filter replay of a recorded reference.
    CbfReplay,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Baseline,
        Scenario::NeedleDrop,
        Scenario::MovedCamera,
        Scenario::MovedPhantomServo,
        Scenario::MovedPhantomPostInsertion,
        Scenario::CbfReplay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::NeedleDrop => "needle_drop",
            Scenario::MovedCamera => "moved_camera",
            Scenario::MovedPhantomServo => "moved_phantom_servo",
            Scenario::MovedPhantomPostInsertion => "moved_phantom_post_insertion",
            Scenario::CbfReplay => "cbf_replay",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scenario> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::config("scenario", format!("unknown scenario {s:?}")))
    }
}

/// Ensemble shape and aggregation choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleBlock {
    pub num_members: usize,
    /// Predicted steps executed before re-predicting.
    pub exec_horizon: usize,
    pub variance_mode: VarianceMode,
}

impl Default for EnsembleBlock {
    fn default() -> Self {
        EnsembleBlock {
            num_members: 4,
            exec_horizon: 4,
            variance_mode: VarianceMode::Population,
        }
    }
}

/// Uncertainty-gate calibration and decision parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodBlock {
    /// Null-widening factor applied to the calibration deviation.
    pub h: f64,
    /// Test significance level.
    pub alpha: f64,
    /// Sliding-window length for the smoothed statistic.
    pub window: usize,
    /// In-distribution rollouts used for calibration.
    pub calibration_rollouts: usize,
    /// Controller that takes over on a handover.
    pub fallback: FallbackController,
}

impl Default for OodBlock {
    fn default() -> Self {
        OodBlock {
            h: 3.0,
            alpha: 0.05,
            window: 3,
            calibration_rollouts: 10,
            fallback: FallbackController::Halt,
        }
    }
}

/// Velocity safety-filter parameters; the set's origin is scene-derived
/// (midpoint of the entry and exit points) at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbfBlock {
    pub semi_axes: [f64; 3],
    pub alpha_cbf: f64,
    pub gamma_d: f64,
    pub activation_rule: ActivationRule,
    /// Integration substeps per control period in offline replay.
    pub substeps: usize,
}

impl Default for CbfBlock {
    fn default() -> Self {
        CbfBlock {
            semi_axes: [0.02, 0.02, 0.018],
            alpha_cbf: 1.0,
            gamma_d: 0.0,
            activation_rule: ActivationRule::OnEntry,
            // At centimeter semi-axes the barrier gradient is ~2/axis, so the
            // clamped discrete update is only stable well below the control
            // period; 50 substeps keeps the step fraction near 0.2.
            substeps: 50,
        }
    }
}

/// Per-scenario perturbation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioBlock {
    /// Step budget per rollout.
    pub max_steps: usize,
    /// Needle release step.
    pub drop_step: u64,
    /// Camera elevation band for the moved-camera scenario (degrees).
    pub ood_camera_elevation_deg: [f64; 2],
    /// Camera azimuth band for the moved-camera scenario (degrees).
    pub ood_camera_azimuth_deg: [f64; 2],
    /// Steps between periodic phantom nudges.
    pub servo_period: u64,
    /// Magnitude of one periodic phantom nudge (m).
    pub servo_move: f64,
    /// Tip depth below the phantom surface that arms the large move (m).
    pub post_insertion_depth: f64,
    /// Magnitude of the post-insertion phantom move (m).
    pub post_insertion_move: f64,
    /// Speed of the replay reference's scripted escape (m/s).
    pub replay_escape_speed: f64,
}

impl Default for ScenarioBlock {
    fn default() -> Self {
        ScenarioBlock {
            max_steps: 160,
            drop_step: 8,
            ood_camera_elevation_deg: [35.0, 50.0],
            ood_camera_azimuth_deg: [-10.0, 10.0],
            servo_period: 15,
            servo_move: 0.003,
            post_insertion_depth: 0.002,
            post_insertion_move: 0.02,
            replay_escape_speed: 0.05,
        }
    }
}

/// Everything one run needs: paths, scenario, seed, and parameter blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_dir: PathBuf,
    pub model_dir: PathBuf,
    /// Output root; falls back to `SUTURE_SAFE_OUT`, then `out`.
    pub out_dir: Option<PathBuf>,
    pub scenario: Scenario,
    pub num_rollouts: usize,
    pub num_train: usize,
    pub num_val: usize,
    pub seed: u64,
    pub track: VelocityTrackingParams,
    pub expert: ExpertParams,
    pub scene: SceneDistribution,
    pub train: TrainConfig,
    pub ensemble: EnsembleBlock,
    pub ood: OodBlock,
    pub cbf: CbfBlock,
    pub scenario_params: ScenarioBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_dir: PathBuf::from("data"),
            model_dir: PathBuf::from("model"),
            out_dir: None,
            scenario: Scenario::Baseline,
            num_rollouts: 20,
            num_train: 100,
            num_val: 33,
            seed: 7,
            track: VelocityTrackingParams::default(),
            expert: ExpertParams::default(),
            scene: SceneDistribution::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleBlock::default(),
            ood: OodBlock::default(),
            cbf: CbfBlock::default(),
            scenario_params: ScenarioBlock::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_rollouts == 0 {
            return Err(Error::config("num_rollouts", "must be positive"));
        }
        if self.num_train == 0 || self.num_val == 0 {
            return Err(Error::config("num_train/num_val", "must be positive"));
        }
        self.track.validate()?;
        self.expert.validate()?;
        self.train.validate()?;
        if self.ensemble.num_members < 2 {
            return Err(Error::config("ensemble.num_members", "need at least two members"));
        }
        if self.ensemble.exec_horizon == 0
            || self.ensemble.exec_horizon > self.train.pred_horizon
        {
            return Err(Error::config(
                "ensemble.exec_horizon",
                "must lie in [1, train.pred_horizon]",
            ));
        }
        if !(self.ood.h > 0.0) {
            return Err(Error::config("ood.h", "must be positive"));
        }
        if !(self.ood.alpha > 0.0 && self.ood.alpha < 1.0) {
            return Err(Error::config("ood.alpha", "must lie in (0, 1)"));
        }
        if self.ood.window == 0 {
            return Err(Error::config("ood.window", "must be positive"));
        }
        if self.ood.calibration_rollouts < 5 {
            return Err(Error::config(
                "ood.calibration_rollouts",
                "calibration needs at least five rollouts",
            ));
        }
        if self.cbf.semi_axes.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::config("cbf.semi_axes", "must be positive"));
        }
        if !(self.cbf.alpha_cbf > 0.0) {
            return Err(Error::config("cbf.alpha_cbf", "must be positive"));
        }
        if self.cbf.gamma_d < 0.0 {
            return Err(Error::config("cbf.gamma_d", "must be non-negative"));
        }
        if self.track.lambda_track <= self.cbf.alpha_cbf {
            return Err(Error::config(
                "cbf.alpha_cbf",
                "track.lambda_track must exceed alpha_cbf",
            ));
        }
        if self.cbf.substeps == 0 {
            return Err(Error::config("cbf.substeps", "must be positive"));
        }
        let sp = &self.scenario_params;
        if sp.max_steps == 0 {
            return Err(Error::config("scenario_params.max_steps", "must be positive"));
        }
        if sp.servo_period == 0 {
            return Err(Error::config("scenario_params.servo_period", "must be positive"));
        }
        for (name, band) in [
            ("ood_camera_elevation_deg", sp.ood_camera_elevation_deg),
            ("ood_camera_azimuth_deg", sp.ood_camera_azimuth_deg),
        ] {
            if band[0] > band[1] {
                return Err(Error::config(
                    format!("scenario_params.{name}"),
                    "band must be ordered low..high",
                ));
            }
        }
        for (name, v) in [
            ("servo_move", sp.servo_move),
            ("post_insertion_depth", sp.post_insertion_depth),
            ("post_insertion_move", sp.post_insertion_move),
            ("replay_escape_speed", sp.replay_escape_speed),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(
                    format!("scenario_params.{name}"),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }

    /// Output root: explicit config value, else the environment default,
    /// else `out`.
    pub fn resolve_out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        if let Ok(env) = std::env::var(OUT_ENV) {
            if !env.is_empty() {
                return PathBuf::from(env);
            }
        }
        PathBuf::from("out")
    }
}

/// Read and parse a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config("config", format!("cannot read {}: {e}", path.display()))
    })?;
    let cfg: ExperimentConfig = toml::from_str(&text)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    #[test]
    fn defaults_validate_and_roundtrip_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.train.max_steps, cfg.train.max_steps);
        assert_eq!(back.cbf.semi_axes, cfg.cbf.semi_axes);
    }

    #[test]
    fn empty_and_partial_files_fill_in_defaults() {
        let empty: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(empty.num_rollouts, 20);
        assert_eq!(empty.train.learning_rate, 1e-4);

        let partial: ExperimentConfig = toml::from_str(
            "seed = 99\nscenario = \"needle_drop\"\n[ood]\nh = 2.5\n",
        )
        .unwrap();
        assert_eq!(partial.seed, 99);
        assert_eq!(partial.scenario, Scenario::NeedleDrop);
        assert_eq!(partial.ood.h, 2.5);
        assert_eq!(partial.ood.alpha, 0.05);
    }

    #[test]
    fn scenario_names_roundtrip() {
        for sc in Scenario::ALL {
            assert_eq!(Scenario::from_str(sc.name()).unwrap(), sc);
        }
        assert!(Scenario::from_str("warp_drive").is_err());
    }

    #[test]
    fn invalid_fields_are_rejected_by_name() {
        let mut cfg = ExperimentConfig::default();
        cfg.ood.alpha = 1.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("ood.alpha"), "{err}");

        let mut cfg = ExperimentConfig::default();
        cfg.cbf.alpha_cbf = 10.0; // at default lambda_track = 5
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("alpha_cbf"), "{err}");

        let mut cfg = ExperimentConfig::default();
        cfg.ood.calibration_rollouts = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn out_dir_resolution_prefers_the_config_value() {
        let mut cfg = ExperimentConfig::default();
        cfg.out_dir = Some(PathBuf::from("/tmp/somewhere"));
        assert_eq!(cfg.resolve_out_dir(), PathBuf::from("/tmp/somewhere"));
    }
}
