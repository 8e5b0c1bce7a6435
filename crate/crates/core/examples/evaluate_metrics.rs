//! Score noisy predictions for a synthetic dataset: the MPJPE table, MRRPE
//! and handedness AP.
//!
//! ```text
//! cargo run --example evaluate_metrics [noise_mm]
//! ```

use handrig::dataset_io::build_eval_batch;
use handrig::objectives::evaluate;
use handrig::synthrig::{generate_rig, synth_dataset, synth_predictions, RigSpec};

fn main() {
    let sigma: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5.0);
    let rig = generate_rig(&RigSpec { n_cameras: 20, ..RigSpec::default() }).unwrap();
    let ds = synth_dataset(&rig, 6, 3);
    let preds = synth_predictions(&ds, sigma, 3);
    let batch = build_eval_batch(&ds.records, &preds).unwrap();
    let report = evaluate(&batch).unwrap();
    print!("{}", report.to_text());
}
