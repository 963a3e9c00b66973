//! Property tests: statements that must hold for every well-formed input,
//! not just the pinned unit examples inside the modules.

use proptest::prelude::*;

use suturesafe::cbf::{ActivationRule, CbfFilter, EllipsoidSafeSet};
use suturesafe::data::{self, Episode, EpisodeStep, Normalizer};
use suturesafe::ddpm::{self, NoiseSchedule};
use suturesafe::ensemble::{EnsemblePrediction, VarianceMode};
use suturesafe::expert::Phase;
use suturesafe::ood::{self, IdModel};
use suturesafe::sim::{Vec3, ACTION_DIM, OBS_DIM};
use suturesafe::stats::RngStream;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Member action sequences with the given shape from a flat value pool.
fn sequences_from(values: &[f64], n: usize, horizon: usize) -> Vec<Vec<[f64; ACTION_DIM]>> {
    let mut it = values.iter().cycle();
    (0..n)
        .map(|_| {
            (0..horizon)
                .map(|_| {
                    let mut a = [0.0; ACTION_DIM];
                    for v in a.iter_mut() {
                        *v = *it.next().unwrap();
                    }
                    a
                })
                .collect()
        })
        .collect()
}

fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut rng = RngStream::new(seed, 0);
    let mut out = items.to_vec();
    for i in (1..out.len()).rev() {
        out.swap(i, rng.index(i + 1));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_bitwise_permutation_invariant(
        n in 2usize..6,
        horizon in 1usize..5,
        values in prop::collection::vec(-100.0f64..100.0, 60),
        seed in any::<u64>(),
    ) {
        let seqs = sequences_from(&values, n, horizon);
        let base = EnsemblePrediction::aggregate(seqs.clone(), VarianceMode::Population).unwrap();
        let perm = EnsemblePrediction::aggregate(shuffled(&seqs, seed), VarianceMode::Population).unwrap();
        prop_assert_eq!(&base.mean_seq, &perm.mean_seq);
        prop_assert_eq!(&base.var_seq, &perm.var_seq);
        prop_assert_eq!(&base.sigma_hat, &perm.sigma_hat);
    }

    #[test]
    fn aggregation_matches_a_naive_oracle(
        n in 2usize..6,
        horizon in 1usize..5,
        values in prop::collection::vec(-10.0f64..10.0, 60),
    ) {
        let seqs = sequences_from(&values, n, horizon);
        for mode in [VarianceMode::Population, VarianceMode::Sample] {
            let agg = EnsemblePrediction::aggregate(seqs.clone(), mode).unwrap();
            for t in 0..horizon {
                let mut naive_sigma = 0.0f64;
                for d in 0..ACTION_DIM {
                    let col: Vec<f64> = seqs.iter().map(|s| s[t][d]).collect();
                    let mean = col.iter().sum::<f64>() / n as f64;
                    let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
                    let div = match mode {
                        VarianceMode::Population => n as f64,
                        VarianceMode::Sample => (n - 1) as f64,
                    };
                    let var = ss / div;
                    prop_assert!(close(agg.mean_seq[t][d], mean, 1e-12), "mean at ({t},{d})");
                    prop_assert!(close(agg.var_seq[t][d], var, 1e-12), "var at ({t},{d})");
                    naive_sigma = naive_sigma.max(var.abs());
                }
                prop_assert!(close(agg.sigma_hat[t], naive_sigma, 1e-12), "sigma at {t}");
            }
        }
    }

    #[test]
    fn safe_velocity_is_feasible_and_minimal(
        axes in prop::collection::vec(0.01f64..0.2, 3),
        alpha_cbf in 0.1f64..5.0,
        gamma_d in 0.0f64..0.5,
        unit in prop::collection::vec(-1.0f64..1.0, 3),
        radius in 0.0f64..0.99,
        v in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let set = EllipsoidSafeSet {
            semi_axes: [axes[0], axes[1], axes[2]],
            origin: Vec3([0.05, -0.02, 0.1]),
            alpha_cbf,
            gamma_d,
        };
        // A point strictly inside the uninflated set.
        let dir = Vec3([unit[0], unit[1], unit[2]]);
        let dir = dir.normalized().unwrap_or(Vec3([1.0, 0.0, 0.0]));
        let x = set.origin
            + Vec3([
                dir.x() * radius * axes[0],
                dir.y() * radius * axes[1],
                dir.z() * radius * axes[2],
            ]);
        let filter = CbfFilter::new(set, ActivationRule::Always, alpha_cbf + 1.0).unwrap();
        let v_nom = Vec3([v[0], v[1], v[2]]);
        let v_safe = filter.safe_velocity(x, v_nom).unwrap();

        let n_o = set.inward_normal(x);
        let h = set.barrier(x);
        if n_o.norm() > 0.0 {
            // Enforced linear constraint, allowing only rounding error.
            prop_assert!(
                n_o.dot(v_safe) + alpha_cbf * h >= -1e-12,
                "constraint residual {}",
                n_o.dot(v_safe) + alpha_cbf * h
            );
            if n_o.dot(v_nom) + alpha_cbf * h >= 0.0 {
                prop_assert_eq!(v_safe.0, v_nom.0, "feasible input must pass through");
            } else {
                // Minimal correction lands exactly on the constraint surface.
                prop_assert!((n_o.dot(v_safe) + alpha_cbf * h).abs() <= 1e-12);
                // The correction is along the inward normal.
                let delta = v_safe - v_nom;
                let along = n_o * delta.dot(n_o);
                prop_assert!((delta - along).norm() <= 1e-12 * delta.norm().max(1.0));
            }
        } else {
            prop_assert_eq!(v_safe.0, v_nom.0);
        }
    }

    #[test]
    fn lrt_verdict_is_internally_consistent(
        x_bar in -5.0f64..5.0,
        sigma in 0.01f64..10.0,
        h in 0.5f64..5.0,
        alpha in 0.001f64..0.5,
        x in -50.0f64..50.0,
    ) {
        let model = IdModel { x_bar, sigma, h, alpha, n_calib: 30 };
        let v = ood::lrt(&model, x);
        let z = (x - x_bar) / (h * sigma);
        prop_assert!(close(v.test_stat, z * z, 1e-12));
        prop_assert!(close(v.lambda_stat, (-v.test_stat / 2.0).exp(), 1e-12));
        prop_assert!((0.0..=1.0).contains(&v.p_value));
        prop_assert_eq!(v.is_ood, v.p_value < alpha);

        // Moving further from the calibration mean never raises the p-value.
        let further = ood::lrt(&model, x_bar + (x - x_bar) * 2.0);
        prop_assert!(further.p_value <= v.p_value + 1e-15);
    }

    #[test]
    fn linear_schedule_satisfies_its_recurrences(
        steps in 2usize..150,
        beta_start in 1e-6f64..1e-2,
        spread in 1.5f64..50.0,
    ) {
        let beta_end = (beta_start * spread).min(0.5);
        let s = NoiseSchedule::linear(steps, beta_start, beta_end).unwrap();
        let mut bar = 1.0f64;
        let mut prev_bar = 1.0f64;
        for k in 0..steps {
            let beta = s.beta(k);
            prop_assert!(beta > 0.0 && beta < 1.0);
            prop_assert!(close(s.alpha(k), 1.0 - beta, 1e-12));
            bar *= 1.0 - beta;
            prop_assert!(close(s.alpha_bar(k), bar, 1e-9), "alpha_bar at {k}");
            prop_assert!(s.alpha_bar(k) < prev_bar, "alpha_bar must strictly decrease");
            // Posterior spread matches its defining ratio, with the
            // convention that the accumulated product before step 0 is 1.
            let sigma2 = beta * (1.0 - prev_bar) / (1.0 - bar);
            prop_assert!(close(s.posterior_sigma(k) * s.posterior_sigma(k), sigma2, 1e-9));
            prev_bar = bar;
        }
    }

    #[test]
    fn noise_loss_identities_hold(
        noise in prop::collection::vec(-3.0f64..3.0, 1..40),
        offset in -2.0f64..2.0,
    ) {
        prop_assert_eq!(ddpm::loss_from_prediction(&noise, &noise), 0.0);
        let shifted: Vec<f64> = noise.iter().map(|v| v + offset).collect();
        let loss = ddpm::loss_from_prediction(&noise, &shifted);
        prop_assert!(close(loss, offset * offset, 1e-12));
    }

    #[test]
    fn rng_streams_are_reproducible_and_children_distinct(
        seed in any::<u64>(),
        stream in 0u64..1000,
    ) {
        let mut a = RngStream::new(seed, stream);
        let mut b = RngStream::new(seed, stream);
        let draws_a: Vec<f64> = (0..8).map(|_| a.uniform()).collect();
        let draws_b: Vec<f64> = (0..8).map(|_| b.uniform()).collect();
        prop_assert_eq!(draws_a, draws_b);

        let mut c1 = a.child(1);
        let mut c2 = a.child(2);
        let d1: Vec<f64> = (0..8).map(|_| c1.uniform()).collect();
        let d2: Vec<f64> = (0..8).map(|_| c2.uniform()).collect();
        prop_assert_ne!(d1, d2, "sibling child streams must not coincide");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn normalizer_roundtrips_inside_the_fitted_range(
        base in -50.0f64..50.0,
        scale in 0.1f64..10.0,
        probe in 0.0f64..1.0,
    ) {
        // Two episodes spanning a deterministic range so every column has
        // spread; the probe lies inside that range.
        let make = |lo: f64, hi: f64| -> Episode {
            let steps = (0..3)
                .map(|t| {
                    let x = lo + (hi - lo) * t as f64 / 2.0;
                    EpisodeStep { obs: [x; OBS_DIM], act: [x * 0.5; ACTION_DIM] }
                })
                .collect();
            Episode { episode_id: "ep".into(), scenario: "expert_demos".into(), steps }
        };
        let lo = base - scale;
        let hi = base + scale;
        let norm = Normalizer::fit(&[make(lo, hi)]).unwrap();
        let x = lo + (hi - lo) * probe;
        let obs = [x; OBS_DIM];
        let back = norm.denormalize_obs(&norm.normalize_obs(&obs));
        for (orig, b) in obs.iter().zip(back.iter()) {
            prop_assert!(close(*orig, *b, 1e-12));
        }
        let act = [x * 0.5; ACTION_DIM];
        let back = norm.denormalize_act(&norm.normalize_act(&act));
        for (orig, b) in act.iter().zip(back.iter()) {
            prop_assert!(close(*orig, *b, 1e-12));
        }
        // Normalized training data lands in [-1, 1].
        let unit = norm.normalize_obs(&[hi; OBS_DIM]);
        for v in unit {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn episode_csv_roundtrips_random_payloads(
        values in prop::collection::vec(-1000.0f64..1000.0, 8),
        steps in 1usize..6,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let episode = Episode {
            episode_id: "ep_00000".into(),
            scenario: "expert_demos".into(),
            steps: (0..steps)
                .map(|t| {
                    let mut obs = [0.0; OBS_DIM];
                    let mut act = [0.0; ACTION_DIM];
                    for (i, o) in obs.iter_mut().enumerate() {
                        *o = values[(t + i) % values.len()] * 1.000001;
                    }
                    for (i, a) in act.iter_mut().enumerate() {
                        *a = values[(t * 3 + i) % values.len()] / 3.0;
                    }
                    EpisodeStep { obs, act }
                })
                .collect(),
        };
        let path = dir.path().join("ep.csv");
        data::write_episode_csv(&path, &episode).unwrap();
        let back = data::read_episode_csv(&path, "expert_demos").unwrap();
        prop_assert_eq!(episode.steps, back.steps);
    }

    #[test]
    fn trace_csv_roundtrips_every_option_combination(
        values in prop::collection::vec(-10.0f64..10.0, 8),
        sigma_present in any::<bool>(),
        ood_flag in prop::option::of(any::<bool>()),
        h_present in any::<bool>(),
        phase_idx in 0usize..3,
    ) {
        use suturesafe::ensemble::{read_trace_csv, write_trace_csv, TraceRow};
        let phase = [Phase::Approach, Phase::Insert, Phase::Done][phase_idx];
        let mut obs = [0.0; OBS_DIM];
        let mut act = [0.0; ACTION_DIM];
        for (i, o) in obs.iter_mut().enumerate() {
            *o = values[i % values.len()] * 0.7;
        }
        for (i, a) in act.iter_mut().enumerate() {
            *a = values[(i + 3) % values.len()] * 1.3;
        }
        let rows = vec![TraceRow {
            t: 5,
            obs,
            act_exec: act,
            sigma_hat: sigma_present.then_some(values[0].abs()),
            ood_flag,
            h_value: h_present.then_some(values[1]),
            phase,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &rows).unwrap();
        let back = read_trace_csv(&path).unwrap();
        prop_assert_eq!(rows, back);
    }
}
