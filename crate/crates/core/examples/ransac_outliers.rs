//! Plant gross outliers in a few views and watch RANSAC drop them while a
//! plain DLT over every view is dragged off.
//!
//! ```text
//! cargo run --example ransac_outliers
//! ```

use nalgebra::Vector3;

use handrig::geometry::project;
use handrig::synthrig::{generate_rig, RigSpec};
use handrig::triangulation::{triangulate_dlt, triangulate_ransac, Detection2DSet, Observation, RansacConfig};

fn main() {
    let rig = generate_rig(&RigSpec { n_cameras: 12, ..RigSpec::default() }).unwrap();
    let point = Vector3::new(25.0, -40.0, 60.0);
    let mut obs: Vec<Observation> = rig
        .iter()
        .map(|c| {
            let uv = project(&point, c).unwrap();
            Observation::new(c.view_id(), uv.x, uv.y, 0.9)
        })
        .collect();
    for (k, i) in [1usize, 4, 7].iter().enumerate() {
        obs[*i].u += 150.0 + 60.0 * k as f64;
        obs[*i].v -= 90.0;
    }
    let set = Detection2DSet::new(0, obs);

    let dlt = triangulate_dlt(&set, &rig, true).unwrap();
    let robust = triangulate_ransac(&set, &rig, &RansacConfig::default()).unwrap();
    println!("all-view DLT error: {:.2} mm", (dlt.point_world - point).norm());
    println!("RANSAC error:       {:.2e} mm", (robust.point_world - point).norm());
    println!("inliers: {}", robust.inlier_view_ids.join(" "));
    for r in &robust.per_view_residual {
        if !robust.inlier_view_ids.contains(&r.view_id) {
            println!("rejected {} at {:.1} px", r.view_id, r.residual_px.unwrap_or(f64::NAN));
        }
    }
}
