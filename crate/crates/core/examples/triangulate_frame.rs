//! Triangulate all 42 joints of a synthetic two-hand frame from noisy
//! detections, then compare against the planted skeleton.
//!
//! ```text
//! cargo run --example triangulate_frame
//! ```

use handrig::pose::schema;
use handrig::synthrig::{generate_hand, generate_rig, simulate_detections, Articulation, HandSelection, NoiseModel, RigSpec};
use handrig::triangulation::{annotate_frame, RansacConfig};

fn main() {
    let rig = generate_rig(&RigSpec { n_cameras: 30, seed: 1, ..RigSpec::default() }).unwrap();
    let hands = generate_hand(5, HandSelection::Both, Articulation::Random);
    let noise = NoiseModel { pixel_sigma: 1.5, dropout_rate: 0.1, outlier_rate: 0.1, seed: 5 };
    let sim = simulate_detections(&hands, &rig, &noise).unwrap();

    let frame = annotate_frame(&sim.sets, &rig, &RansacConfig::default().with_seed(5));
    println!("{:<8} {:>6} {:>10} {:>9}", "joint", "views", "error_mm", "rms_px");
    for (j, result) in frame.joints.iter().enumerate() {
        let Some(r) = result else {
            println!("{:<8} {:>6}", schema()[j].name, "-");
            continue;
        };
        let err = (r.point_world - hands.joints[j]).norm();
        println!("{:<8} {:>6} {:>10.3} {:>9.3}", schema()[j].name, r.inlier_view_ids.len(), err, r.rms_reprojection_error);
    }
    println!("{} of 42 joints triangulated", frame.valid_count());
}
