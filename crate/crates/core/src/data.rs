//! On-disk episode store, per-dimension min-max normalization, and
//! (observation-window, action-chunk) sampling.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::expert::SceneDistribution;
use crate::sim::{ACTION_DIM, OBS_DIM};
use crate::stats::RngStream;
use crate::{Error, Result};

/// Observation horizon (window length fed to the policy).
pub const DEFAULT_T_O: usize = 4;
/// Prediction horizon (action chunk length).
pub const DEFAULT_T_P: usize = 8;

// ── episodes ────────────────────────────────────────────────────────────

/// One recorded step: full observation and the absolute-pose action.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub obs: [f64; OBS_DIM],
    pub act: [f64; ACTION_DIM],
}

/// An ordered demonstration or rollout recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: String,
    pub scenario: String,
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::InvalidCommand(format!(
                "episode {} is empty",
                self.episode_id
            )));
        }
        for (t, step) in self.steps.iter().enumerate() {
            if !step.obs.iter().chain(step.act.iter()).all(|v| v.is_finite()) {
                return Err(Error::InvalidCommand(format!(
                    "episode {} has a non-finite value at step {t}",
                    self.episode_id
                )));
            }
        }
        Ok(())
    }
}

/// The exact episode CSV header.
pub fn episode_header() -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..OBS_DIM).map(|i| format!("obs_{i}")));
    cols.extend((0..ACTION_DIM).map(|i| format!("act_{i}")));
    cols.join(",")
}

/// Write an episode as CSV (one row per step, shortest-roundtrip floats).
pub fn write_episode_csv(path: &Path, episode: &Episode) -> Result<()> {
    episode.validate()?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", episode_header())?;
    for (t, step) in episode.steps.iter().enumerate() {
        write!(w, "{t}")?;
        for v in step.obs.iter().chain(step.act.iter()) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an episode CSV; the id is the file stem.
pub fn read_episode_csv(path: &Path, scenario: &str) -> Result<Episode> {
    let file = fs::File::open(path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty file"))??;
    if header != episode_header() {
        return Err(Error::parse(path, format!("unexpected header: {header}")));
    }
    let mut steps = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + OBS_DIM + ACTION_DIM {
            return Err(Error::parse(
                path,
                format!("row {}: expected {} columns, got {}", lineno + 2, 1 + OBS_DIM + ACTION_DIM, fields.len()),
            ));
        }
        let mut obs = [0.0; OBS_DIM];
        let mut act = [0.0; ACTION_DIM];
        for (i, f) in fields[1..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(path, format!("row {}: bad float {f:?}", lineno + 2)))?;
            if i < OBS_DIM {
                obs[i] = v;
            } else {
                act[i - OBS_DIM] = v;
            }
        }
        steps.push(EpisodeStep { obs, act });
    }
    let episode = Episode {
        episode_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        scenario: scenario.to_string(),
        steps,
    };
    episode.validate()?;
    Ok(episode)
}

// ── normalization ───────────────────────────────────────────────────────

fn norm_val(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        2.0 * (x - min) / (max - min) - 1.0
    } else {
        // Degenerate dimension: pass through, offset to 0.
        x - min
    }
}

fn denorm_val(y: f64, min: f64, max: f64) -> f64 {
    if max > min {
        min + (y + 1.0) * (max - min) / 2.0
    } else {
        y + min
    }
}

/// Per-dimension affine map to [−1, 1]; out-of-range inputs stay unclamped
/// so out-of-distribution states remain distinguishable after mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs_min: [f64; OBS_DIM],
    pub obs_max: [f64; OBS_DIM],
    pub act_min: [f64; ACTION_DIM],
    pub act_max: [f64; ACTION_DIM],
}

impl Normalizer {
    /// Fit min/max over all steps of the given episodes.
    pub fn fit(episodes: &[Episode]) -> Result<Normalizer> {
        let mut iter = episodes.iter().flat_map(|e| e.steps.iter());
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidCommand("cannot fit normalizer on no data".into()))?;
        let mut n = Normalizer {
            obs_min: first.obs,
            obs_max: first.obs,
            act_min: first.act,
            act_max: first.act,
        };
        for step in episodes.iter().flat_map(|e| e.steps.iter()) {
            for i in 0..OBS_DIM {
                n.obs_min[i] = n.obs_min[i].min(step.obs[i]);
                n.obs_max[i] = n.obs_max[i].max(step.obs[i]);
            }
            for i in 0..ACTION_DIM {
                n.act_min[i] = n.act_min[i].min(step.act[i]);
                n.act_max[i] = n.act_max[i].max(step.act[i]);
            }
        }
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self
            .obs_min
            .iter()
            .zip(self.obs_max.iter())
            .all(|(lo, hi)| hi >= lo)
            && self
                .act_min
                .iter()
                .zip(self.act_max.iter())
                .all(|(lo, hi)| hi >= lo);
        if !ok {
            return Err(Error::config("normalization", "max must be >= min per dimension"));
        }
        Ok(())
    }

    pub fn normalize_obs(&self, x: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        std::array::from_fn(|i| norm_val(x[i], self.obs_min[i], self.obs_max[i]))
    }

    pub fn denormalize_obs(&self, y: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        std::array::from_fn(|i| denorm_val(y[i], self.obs_min[i], self.obs_max[i]))
    }

    pub fn normalize_act(&self, x: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|i| norm_val(x[i], self.act_min[i], self.act_max[i]))
    }

    pub fn denormalize_act(&self, y: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|i| denorm_val(y[i], self.act_min[i], self.act_max[i]))
    }
}

// ── windowed samples ────────────────────────────────────────────────────

/// One training pair: an observation window and the action chunk it
/// conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub obs_window: Vec<[f64; OBS_DIM]>,
    pub action_chunk: Vec<[f64; ACTION_DIM]>,
}

/// Extract the window at anchor `t`, edge-padded by repeating the first or
/// last step where the window exits the episode.
pub fn sample_window(episode: &Episode, t: usize, t_o: usize, t_p: usize) -> Result<TrainingSample> {
    if episode.steps.is_empty() {
        return Err(Error::InvalidCommand("cannot sample from an empty episode".into()));
    }
    if t >= episode.steps.len() {
        return Err(Error::InvalidCommand(format!(
            "window anchor {t} outside episode of length {}",
            episode.steps.len()
        )));
    }
    let last = episode.steps.len() - 1;
    let obs_window = (0..t_o)
        .map(|i| {
            let idx = (t + i).saturating_sub(t_o - 1);
            episode.steps[idx.min(last)].obs
        })
        .collect();
    let action_chunk = (0..t_p).map(|i| episode.steps[(t + i).min(last)].act).collect();
    Ok(TrainingSample {
        obs_window,
        action_chunk,
    })
}

/// Flat index over all (episode, t) pairs for uniform sampling.
#[derive(Debug, Clone)]
pub struct SampleIndex {
    pairs: Vec<(usize, usize)>,
}

impl SampleIndex {
    pub fn new(episodes: &[Episode]) -> SampleIndex {
        let pairs = episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..ep.steps.len()).map(move |t| (e, t)))
            .collect();
        SampleIndex { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Draw one (episode, t) pair uniformly.
    pub fn draw(&self, rng: &mut RngStream) -> (usize, usize) {
        self.pairs[rng.index(self.pairs.len())]
    }
}

// ── dataset on disk ─────────────────────────────────────────────────────

/// Dataset metadata stored as `manifest.toml` at the dataset root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub num_train: usize,
    pub num_val: usize,
    pub scenario: String,
    pub scene: SceneDistribution,
    pub normalization: Normalizer,
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.toml")
}

pub fn episode_path(root: &Path, split: &str, index: usize) -> PathBuf {
    root.join(split).join(format!("ep_{index:05}.csv"))
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(root)?;
    let text = toml::to_string_pretty(manifest)?;
    fs::write(manifest_path(root), text)?;
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(root);
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    let manifest: DatasetManifest = toml::from_str(&text)?;
    manifest.normalization.validate()?;
    Ok(manifest)
}

/// A fully loaded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Episode>,
    pub val: Vec<Episode>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Dataset> {
        let manifest = read_manifest(root)?;
        let load_split = |split: &str, count: usize| -> Result<Vec<Episode>> {
            (0..count)
                .map(|i| read_episode_csv(&episode_path(root, split, i), &manifest.scenario))
                .collect()
        };
        let train = load_split("train", manifest.num_train)?;
        let val = load_split("val", manifest.num_val)?;
        Ok(Dataset {
            manifest,
            train,
            val,
        })
    }

    /// Recompute the training min/max and compare to the manifest.
    pub fn verify_normalization(&self) -> Result<()> {
        let refit = Normalizer::fit(&self.train)?;
        if refit != self.manifest.normalization {
            return Err(Error::config(
                "normalization",
                "manifest min/max does not match a full rescan of the training episodes",
            ));
        }
        Ok(())
    }
}
