//! Command-line driver: dataset generation, ensemble training, gate
//! calibration, scenario rollouts, evaluation, offline replay, and charts.
//!
//! Exit codes: 0 success, 2 usage, 3 bad configuration, 4 missing
//! artifact, 5 scenario failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use suturesafe::cbf;
use suturesafe::config::{self, ExperimentConfig, Scenario};
use suturesafe::data::Dataset;
use suturesafe::ensemble::{self, FallbackController};
use suturesafe::harness::{self, RunOptions, ScenarioArtifacts};
use suturesafe::ood;
use suturesafe::plot;
use suturesafe::{Error, Result};

const SCENARIO_NAMES: [&str; 6] = [
    "baseline",
    "needle_drop",
    "moved_camera",
    "moved_phantom_servo",
    "moved_phantom_post_insertion",
    "cbf_replay",
];

#[derive(Parser)]
#[command(
    name = "suturesafe",
    version,
    about = "Ensemble imitation policies with uncertainty gating and a velocity safety filter"
)]
struct Cli {
    /// Experiment configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the rollout-style commands.
#[derive(Args)]
struct RunFlags {
    /// Scenario to run.
    #[arg(long, value_parser = SCENARIO_NAMES)]
    scenario: Option<String>,
    /// Number of rollouts.
    #[arg(long, value_name = "N")]
    num: Option<usize>,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the uncertainty gate.
    #[arg(long)]
    no_gate: bool,
    /// Disable the velocity safety filter.
    #[arg(long)]
    no_cbf: bool,
    /// Controller to hand over to when the gate fires.
    #[arg(long, value_parser = ["halt", "expert"])]
    fallback: Option<String>,
    /// Output root override.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the expert demonstration dataset.
    GenData {
        /// Number of training episodes.
        #[arg(long)]
        train: Option<usize>,
        /// Number of validation episodes.
        #[arg(long)]
        val: Option<usize>,
        /// Base random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory override.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the policy ensemble on the generated dataset.
    Train {
        /// Base random seed (member seeds derive from it).
        #[arg(long)]
        seed: Option<u64>,
        /// Model directory override.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Calibrate the in-distribution uncertainty model.
    Calibrate {
        /// Base random seed for the calibration rollouts.
        #[arg(long)]
        seed: Option<u64>,
        /// Model directory override (calibration lives with the model).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run rollouts and write their step traces.
    Rollout {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run rollouts and write traces plus the aggregated metrics report.
    Eval {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Replay a recorded reference through the safety filter.
    ReplayCbf {
        /// Base random seed for the reference scene.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root override.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Draw charts from a previous run's artifacts.
    Plot {
        /// Scenario whose artifacts to chart.
        #[arg(long, value_parser = SCENARIO_NAMES)]
        scenario: Option<String>,
        /// Output root override.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 0 for --help/--version and 2 for usage errors.
        Err(err) => err.exit(),
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Toml(_) | Error::Parse { .. } | Error::InvalidCommand(_) => 3,
        Error::MissingArtifact(_) => 4,
        _ => 5,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => config::load_config(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_scenario(name: &str) -> Result<Scenario> {
    name.parse()
}

fn parse_fallback(name: &str) -> Result<FallbackController> {
    match name {
        "halt" => Ok(FallbackController::Halt),
        "expert" => Ok(FallbackController::Expert),
        other => Err(Error::config("fallback", format!("unknown controller `{other}`"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.config)?;
    match cli.command {
        Command::GenData { train, val, seed, out } => {
            if let Some(n) = train {
                cfg.num_train = n;
            }
            if let Some(n) = val {
                cfg.num_val = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.dataset_dir = dir;
            }
            let manifest = harness::generate_data(&cfg)?;
            println!(
                "wrote {} train + {} val episodes under {}",
                manifest.num_train,
                manifest.num_val,
                cfg.dataset_dir.display()
            );
            Ok(())
        }
        Command::Train { seed, out } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.model_dir = dir;
            }
            let dataset = Dataset::load(&cfg.dataset_dir)?;
            dataset.verify_normalization()?;
            let training = harness::train_from_config(&cfg, &dataset)?;
            harness::save_training(&cfg.model_dir, &training)?;
            for summary in training.summaries() {
                println!(
                    "member seed {}: best val loss {:.6} after {} steps{}",
                    summary.seed,
                    summary.best_val,
                    summary.steps_run,
                    if summary.stopped_early { " (early stop)" } else { "" }
                );
            }
            println!("wrote ensemble under {}", cfg.model_dir.display());
            Ok(())
        }
        Command::Calibrate { seed, out } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.model_dir = dir;
            }
            let (model, _) = ensemble::load_ensemble(&cfg.model_dir)?;
            let outcome = harness::calibrate(&cfg, &model)?;
            let model_path = harness::id_model_path(&cfg.model_dir);
            ood::save_id_model(&model_path, &outcome.record)?;
            ood::write_calibration_samples(
                &harness::calibration_samples_path(&cfg.model_dir),
                &outcome.samples,
            )?;
            println!(
                "calibrated on {} samples: mean {:.6}, spread {:.6}; wrote {}",
                outcome.samples.len(),
                outcome.record.model.x_bar,
                outcome.record.model.sigma,
                model_path.display()
            );
            Ok(())
        }
        Command::Rollout { flags } => {
            let (run, dir) = run_flagged(&mut cfg, &flags)?;
            write_run_artifacts(&dir, &run, false)?;
            println!(
                "wrote {} trace file(s) under {}",
                run.traces.len().max(usize::from(run.replay.is_some())),
                dir.display()
            );
            Ok(())
        }
        Command::Eval { flags } => {
            let (run, dir) = run_flagged(&mut cfg, &flags)?;
            write_run_artifacts(&dir, &run, true)?;
            let m = &run.metrics;
            println!(
                "scenario {}: {}/{} successes, trigger rate {:.3}, {} correction(s)",
                m.scenario, m.num_success, m.num_rollouts, m.ood_trigger_rate, m.steps_corrected
            );
            println!("wrote {}", dir.join(harness::METRICS_FILE).display());
            Ok(())
        }
        Command::ReplayCbf { seed, out } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.out_dir = Some(dir);
            }
            cfg.scenario = Scenario::CbfReplay;
            let run = harness::run_scenario(
                &cfg,
                None,
                None,
                &RunOptions {
                    use_gate: false,
                    use_cbf: true,
                    fallback: cfg.ood.fallback,
                },
            )?;
            let dir = scenario_dir(&cfg);
            write_run_artifacts(&dir, &run, true)?;
            let m = &run.metrics;
            println!(
                "replay: filtered min h {:.6}, reference min h {:.6}",
                m.min_h.unwrap_or(f64::NAN),
                m.min_h_reference.unwrap_or(f64::NAN)
            );
            println!("wrote {}", dir.join(harness::REPLAY_CHART_FILE).display());
            Ok(())
        }
        Command::Plot { scenario, out } => {
            if let Some(name) = scenario {
                cfg.scenario = parse_scenario(&name)?;
            }
            if let Some(dir) = out {
                cfg.out_dir = Some(dir);
            }
            let dir = scenario_dir(&cfg);
            if cfg.scenario == Scenario::CbfReplay {
                let rows = cbf::read_replay_csv(&dir.join(harness::REPLAY_FILE))?;
                let set = harness::read_replay_meta(&dir.join(harness::REPLAY_META_FILE))?;
                let svg = plot::replay_chart(&rows, &set, cfg.scenario.name());
                let path = dir.join(harness::REPLAY_CHART_FILE);
                std::fs::write(&path, svg)?;
                println!("wrote {}", path.display());
            } else {
                let traces = harness::load_traces(&dir)?;
                let views: Vec<&[ensemble::TraceRow]> =
                    traces.iter().map(|t| t.as_slice()).collect();
                let svg = plot::sigma_chart(&views, cfg.scenario.name());
                let path = dir.join(harness::SIGMA_CHART_FILE);
                std::fs::write(&path, svg)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

/// Apply rollout-style flags, run the scenario, and return it with the
/// directory its artifacts belong in.
fn run_flagged(cfg: &mut ExperimentConfig, flags: &RunFlags) -> Result<(ScenarioArtifacts, PathBuf)> {
    if let Some(name) = &flags.scenario {
        cfg.scenario = parse_scenario(name)?;
    }
    if let Some(n) = flags.num {
        cfg.num_rollouts = n;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(dir) = &flags.out {
        cfg.out_dir = Some(dir.clone());
    }
    let fallback = match &flags.fallback {
        Some(name) => parse_fallback(name)?,
        None => cfg.ood.fallback,
    };
    let opts = RunOptions {
        use_gate: !flags.no_gate,
        use_cbf: !flags.no_cbf,
        fallback,
    };
    let run = if cfg.scenario == Scenario::CbfReplay {
        harness::run_scenario(cfg, None, None, &opts)?
    } else {
        let (model, _) = ensemble::load_ensemble(&cfg.model_dir)?;
        let id_model = if opts.use_gate {
            Some(ood::load_id_model(&harness::id_model_path(&cfg.model_dir))?.model)
        } else {
            None
        };
        harness::run_scenario(cfg, Some(&model), id_model.as_ref(), &opts)?
    };
    Ok((run, scenario_dir(cfg)))
}

fn scenario_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.resolve_out_dir().join(cfg.scenario.name())
}

/// Write traces (and replay artifacts when present); with `with_metrics`,
/// also the report, and for replays the three-panel chart.
fn write_run_artifacts(dir: &Path, run: &ScenarioArtifacts, with_metrics: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    harness::write_traces(dir, &run.traces)?;
    if let Some(replay) = &run.replay {
        cbf::write_replay_csv(&dir.join(harness::REPLAY_FILE), &replay.rows)?;
        harness::write_replay_meta(&dir.join(harness::REPLAY_META_FILE), &replay.set)?;
        if with_metrics {
            let svg = plot::replay_chart(&replay.rows, &replay.set, Scenario::CbfReplay.name());
            std::fs::write(dir.join(harness::REPLAY_CHART_FILE), svg)?;
        }
    }
    if with_metrics {
        harness::write_metrics(&dir.join(harness::METRICS_FILE), &run.metrics)?;
    }
    Ok(())
}
