//! Out-of-distribution gating: a Gaussian in-distribution model of the
//! ensemble uncertainty statistic, calibrated from nominal rollouts, and a
//! per-step likelihood-ratio test that decides when to hand control back.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats::{chi2_1_sf, mean, std_pop};
use crate::{Error, Result};

/// Gaussian model of the in-distribution uncertainty statistic:
/// null hypothesis N(x_bar, (h·sigma)²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdModel {
    pub x_bar: f64,
    pub sigma: f64,
    /// Variance inflation factor on top of the calibration spread.
    pub h: f64,
    /// Significance level of the per-step test.
    pub alpha: f64,
    pub n_calib: usize,
}

pub const MIN_CALIBRATION_SAMPLES: usize = 30;
pub const DEGENERATE_SIGMA: f64 = 1e-12;

impl Default for IdModel {
    fn default() -> Self {
        IdModel {
            x_bar: 0.0,
            sigma: 1.0,
            h: 1.0,
            alpha: 0.05,
            n_calib: MIN_CALIBRATION_SAMPLES,
        }
    }
}

impl IdModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::config("sigma", "must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        if self.n_calib < MIN_CALIBRATION_SAMPLES {
            return Err(Error::config(
                "n_calib",
                format!("needs at least {MIN_CALIBRATION_SAMPLES} samples"),
            ));
        }
        if !(self.h > 0.0) {
            return Err(Error::config("h", "must be positive"));
        }
        Ok(())
    }
}

/// Sample mean and population standard deviation of calibration samples.
pub fn calibration_stats(samples: &[f64]) -> (f64, f64) {
    (mean(samples), std_pop(samples))
}

/// Fit the in-distribution model from pooled per-step uncertainty samples.
pub fn calibrate_from_samples(samples: &[f64], h: f64, alpha: f64) -> Result<IdModel> {
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::DegenerateCalibration(format!(
            "only {} calibration samples; need at least {MIN_CALIBRATION_SAMPLES}",
            samples.len()
        )));
    }
    let (x_bar, sigma) = calibration_stats(samples);
    if sigma < DEGENERATE_SIGMA {
        return Err(Error::DegenerateCalibration(
            "calibration samples have (near-)zero spread; ensemble members collapsed".into(),
        ));
    }
    let model = IdModel {
        x_bar,
        sigma,
        h,
        alpha,
        n_calib: samples.len(),
    };
    model.validate()?;
    Ok(model)
}

/// Outcome of one likelihood-ratio test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrtVerdict {
    /// λ = L(null)/L(free-mean alternative) ∈ (0, 1].
    pub lambda_stat: f64,
    /// −2·ln λ = ((x − x_bar)/(h·sigma))².
    pub test_stat: f64,
    pub p_value: f64,
    pub is_ood: bool,
}

/// Likelihood-ratio test of one observed uncertainty sample against the
/// in-distribution model. The free-mean alternative puts its MLE at the
/// sample itself, so the statistic reduces to a squared z-score with a
/// χ²₁ reference distribution.
pub fn lrt(model: &IdModel, x: f64) -> LrtVerdict {
    let z = (x - model.x_bar) / (model.h * model.sigma);
    let test_stat = z * z;
    let lambda_stat = (-test_stat / 2.0).exp();
    let p_value = chi2_1_sf(test_stat).expect("test statistic is non-negative");
    LrtVerdict {
        lambda_stat,
        test_stat,
        p_value,
        is_ood: p_value < model.alpha,
    }
}

/// Stateful per-rollout gate: applies an optional sliding median over the
/// last `window` test statistics before thresholding (window 1 = per-step).
#[derive(Debug, Clone)]
pub struct LrtGate {
    pub model: IdModel,
    pub window: usize,
    history: VecDeque<f64>,
}

impl LrtGate {
    pub fn new(model: IdModel, window: usize) -> Result<LrtGate> {
        model.validate()?;
        if window == 0 {
            return Err(Error::config("window", "must be at least 1"));
        }
        Ok(LrtGate {
            model,
            window,
            history: VecDeque::new(),
        })
    }

    /// Clear the sliding history (call between rollouts).
    pub fn reset(&mut self) {
        self.history.clear();
    }

    /// Test one sample; the verdict reflects the windowed median statistic.
    pub fn check(&mut self, x: f64) -> LrtVerdict {
        let raw = lrt(&self.model, x);
        if self.window == 1 {
            return raw;
        }
        self.history.push_back(raw.test_stat);
        while self.history.len() > self.window {
            self.history.pop_front();
        }
        let mut stats: Vec<f64> = self.history.iter().copied().collect();
        stats.sort_by(|a, b| a.partial_cmp(b).expect("test statistics are finite"));
        // Lower median: while the window is still filling, an isolated spike
        // cannot dominate, so the gate stays conservative during warmup.
        let smoothed = stats[(stats.len() - 1) / 2];
        let p_value = chi2_1_sf(smoothed).expect("median of non-negative statistics");
        LrtVerdict {
            lambda_stat: (-smoothed / 2.0).exp(),
            test_stat: smoothed,
            p_value,
            is_ood: p_value < self.model.alpha,
        }
    }
}

// ── serialization ───────────────────────────────────────────────────────

/// On-disk calibration record: the fitted model plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdModelFile {
    pub dataset_id: String,
    pub seed: u64,
    #[serde(flatten)]
    pub model: IdModel,
}

pub fn save_id_model(path: &Path, record: &IdModelFile) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = toml::to_string_pretty(record).map_err(Error::from)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_id_model(path: &Path) -> Result<IdModelFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    let record: IdModelFile =
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    record.model.validate()?;
    Ok(record)
}

/// Pooled calibration samples as a one-column CSV for inspection.
pub fn write_calibration_samples(path: &Path, samples: &[f64]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("i,sigma_hat\n");
    for (i, s) in samples.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi2_1_quantile, RngStream};

    fn model() -> IdModel {
        IdModel {
            x_bar: 2.0,
            sigma: 0.5,
            h: 1.0,
            alpha: 0.05,
            n_calib: 100,
        }
    }

    #[test]
    fn hand_statistics_match_population_convention() {
        let (x_bar, sigma) = calibration_stats(&[1.0, 2.0, 3.0]);
        assert_eq!(x_bar, 2.0);
        assert!((sigma - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_samples_are_a_degenerate_calibration() {
        let samples = vec![0.7; 50];
        let err = calibrate_from_samples(&samples, 1.0, 0.05).unwrap_err();
        assert!(matches!(err, Error::DegenerateCalibration(_)), "{err}");
    }

    #[test]
    fn too_few_samples_are_rejected() {
        let samples: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(calibrate_from_samples(&samples, 1.0, 0.05).is_err());
    }

    #[test]
    fn calibration_is_deterministic_and_stores_parameters() {
        let mut rng = RngStream::new(3, 0);
        let samples: Vec<f64> = (0..200).map(|_| 1.5 + 0.2 * rng.normal()).collect();
        let a = calibrate_from_samples(&samples, 2.5, 0.01).unwrap();
        let b = calibrate_from_samples(&samples, 2.5, 0.01).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.h, 2.5);
        assert_eq!(a.alpha, 0.01);
        assert_eq!(a.n_calib, 200);
    }

    #[test]
    fn null_maximizer_is_in_distribution() {
        let m = model();
        let v = lrt(&m, m.x_bar);
        assert_eq!(v.lambda_stat, 1.0);
        assert_eq!(v.test_stat, 0.0);
        assert!(!v.is_ood);
        assert!((v.p_value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_sigma_is_ood_and_one_sigma_is_not() {
        let m = model();
        let q95 = chi2_1_quantile(0.95).unwrap();
        assert!((q95 - 3.841458820694124).abs() < 1e-9);

        let far = lrt(&m, m.x_bar + 3.0 * m.h * m.sigma);
        assert!((far.test_stat - 9.0).abs() < 1e-12);
        assert!(far.test_stat > q95);
        assert!(far.is_ood);

        let near = lrt(&m, m.x_bar + 1.0 * m.h * m.sigma);
        assert!((near.test_stat - 1.0).abs() < 1e-12);
        assert!(near.test_stat < q95);
        assert!(!near.is_ood);
    }

    #[test]
    fn test_statistic_is_symmetric_and_monotone() {
        let m = model();
        // Dyadic offsets keep x_bar ± d exactly representable, so the
        // statistics must agree bit-for-bit.
        for d in [0.125, 0.5, 1.25, 2.5] {
            let plus = lrt(&m, m.x_bar + d);
            let minus = lrt(&m, m.x_bar - d);
            assert_eq!(plus.test_stat, minus.test_stat);
        }
        let mut last = -1.0;
        for d in [0.0, 0.2, 0.5, 1.0, 2.0, 4.0] {
            let v = lrt(&m, m.x_bar + d);
            assert!(v.test_stat > last);
            assert!(v.lambda_stat > 0.0 && v.lambda_stat <= 1.0);
            assert!(v.test_stat >= 0.0);
            last = v.test_stat;
        }
    }

    #[test]
    fn chi_squared_decision_equals_direct_threshold() {
        let m = model();
        let q95 = chi2_1_quantile(1.0 - m.alpha).unwrap();
        let cutoff = m.h * m.sigma * q95.sqrt();
        let mut rng = RngStream::new(17, 0);
        for _ in 0..10_000 {
            let x = m.x_bar + 4.0 * rng.normal();
            let v = lrt(&m, x);
            let direct = (x - m.x_bar).abs() > cutoff;
            assert_eq!(v.is_ood, direct, "x = {x}");
        }
    }

    #[test]
    fn sliding_median_filters_isolated_spikes() {
        let m = model();
        let mut gate = LrtGate::new(m, 3).unwrap();
        // One spike surrounded by nominal samples never trips a median-of-3.
        assert!(!gate.check(m.x_bar).is_ood);
        assert!(!gate.check(m.x_bar + 10.0).is_ood);
        assert!(!gate.check(m.x_bar + 0.1).is_ood);

        // Two consecutive spikes after a nominal sample dominate the median.
        gate.reset();
        assert!(!gate.check(m.x_bar).is_ood);
        assert!(!gate.check(m.x_bar + 10.0).is_ood);
        assert!(gate.check(m.x_bar + 11.0).is_ood);

        // Window 1 passes raw verdicts through.
        let mut raw_gate = LrtGate::new(m, 1).unwrap();
        assert!(raw_gate.check(m.x_bar + 10.0).is_ood);
        assert_eq!(
            raw_gate.check(m.x_bar + 0.3).test_stat,
            lrt(&m, m.x_bar + 0.3).test_stat
        );
    }

    #[test]
    fn invalid_models_are_rejected() {
        let mut m = model();
        m.sigma = 0.0;
        assert!(m.validate().is_err());
        let mut m = model();
        m.alpha = 1.5;
        assert!(m.validate().is_err());
        let mut m = model();
        m.n_calib = 5;
        assert!(m.validate().is_err());
        assert!(LrtGate::new(model(), 0).is_err());
    }

    #[test]
    fn id_model_file_roundtrips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("id_model.toml");
        let record = IdModelFile {
            dataset_id: "suture-train-100".into(),
            seed: 42,
            model: IdModel {
                x_bar: 0.0123,
                sigma: 0.0045,
                h: 3.0,
                alpha: 0.05,
                n_calib: 640,
            },
        };
        save_id_model(&path, &record).unwrap();
        let back = load_id_model(&path).unwrap();
        assert_eq!(back, record);
    }

    #[test]
    fn calibration_sample_csv_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.csv");
        write_calibration_samples(&path, &[0.1, 0.25]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "i,sigma_hat\n0,0.1\n1,0.25\n");
    }
}
