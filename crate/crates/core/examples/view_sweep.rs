//! Triangulation error against the number of views on a 90-camera rig.
//!
//! Noise is calibrated so that using every camera lands near 2.78 mm; the
//! error should then shrink as views are added.
//!
//! ```text
//! cargo run --release --example view_sweep [trials]
//! ```

use handrig::synthrig::{run_sweep_plan, SweepPlan};

fn main() {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let plan = SweepPlan { trials, ..SweepPlan::default() };
    let started = std::time::Instant::now();
    let result = run_sweep_plan(&plan).expect("sweep runs");
    print!("{}", result.to_text());
    eprintln!("{:.1} s", started.elapsed().as_secs_f64());
}
