//! Throwaway diagnostic — not part of the suite.

use suturesafe::data::{sample_window, Dataset};
use suturesafe::ensemble;
use suturesafe::stats::RngStream;

#[test]
#[ignore]
fn action_error_probe() {
    let dataset = Dataset::load(std::path::Path::new("/tmp/full/data")).unwrap();
    let (model, _) = ensemble::load_ensemble(std::path::Path::new("/tmp/full/model")).unwrap();
    let t_o = model.obs_horizon;
    let t_p = model.pred_horizon;
    let norm = &model.normalizer;

    let mut rngs: Vec<RngStream> =
        (0..model.members.len()).map(|i| RngStream::new(99, i as u64)).collect();

    let mut pos_err_exec = Vec::new(); // |Δposition| per step over executed horizon
    let mut pos_spread = Vec::new(); // member spread in position
    let mut per_step_expert_move = Vec::new();

    for ep in dataset.val.iter().take(8) {
        let anchors = [0, ep.steps.len() / 4, ep.steps.len() / 2, 3 * ep.steps.len() / 4];
        for &t in &anchors {
            let sample = sample_window(ep, t, t_o, t_p).unwrap();
            let window: Vec<f64> = sample
                .obs_window
                .iter()
                .flat_map(|o| norm.normalize_obs(o).to_vec())
                .collect();
            let pred = model.predict(&window, &mut rngs).unwrap();
            for j in 0..model.exec_horizon.min(t_p) {
                let truth = sample.action_chunk[j];
                let got = pred.mean_seq[j];
                let d = ((got[0] - truth[0]).powi(2)
                    + (got[1] - truth[1]).powi(2)
                    + (got[2] - truth[2]).powi(2))
                .sqrt();
                pos_err_exec.push(d);
                let spread = pred.sigma_hat[j].sqrt();
                pos_spread.push(spread);
                if t + j + 1 < ep.steps.len() {
                    let a = ep.steps[t + j].act;
                    let b = ep.steps[t + j + 1].act;
                    per_step_expert_move.push(
                        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2))
                            .sqrt(),
                    );
                }
            }
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut sorted = pos_err_exec.clone();
    sorted.sort_by(f64::total_cmp);
    println!("exec_horizon = {}", model.exec_horizon);
    println!(
        "pos target error (m): mean {:.5}  median {:.5}  p90 {:.5}  max {:.5}",
        mean(&pos_err_exec),
        sorted[sorted.len() / 2],
        sorted[sorted.len() * 9 / 10],
        sorted.last().unwrap()
    );
    println!("member sigma_hat sqrt (denorm units): mean {:.5}", mean(&pos_spread));
    println!("expert per-step move (m): mean {:.5}", mean(&per_step_expert_move));
}
