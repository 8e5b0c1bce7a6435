//! Render Gaussian heatmaps for a few joints, decode them with hard and soft
//! argmax, and round-trip the binary volume dump.
//!
//! ```text
//! cargo run --example heatmap_roundtrip
//! ```

use handrig::heatmap::{
    decode_hard_argmax, decode_rel_depth, decode_soft_argmax_3d, read_volume_dump, render_gaussian, write_volume_dump,
    RelDepthHeatmap, SoftArgmaxMode, VolumeDims, VoxelCoord, DEFAULT_SIGMA, REL_DEPTH_BINS,
};

fn main() {
    let joints = vec![
        VoxelCoord::new(20.3, 31.7, 12.5),
        VoxelCoord::new(40.0, 10.25, 50.9),
        VoxelCoord::new(31.5, 31.5, 31.5),
    ];
    let dims = VolumeDims::new(joints.len(), 64, 64, 64);
    let h = render_gaussian(&joints, DEFAULT_SIGMA, dims).unwrap();
    let hard = decode_hard_argmax(&h);
    let soft = decode_soft_argmax_3d(&h, SoftArgmaxMode::Normalized).unwrap();
    for ((c, a), s) in joints.iter().zip(&hard).zip(&soft) {
        println!(
            "planted ({:6.2} {:6.2} {:6.2})  hard ({:3} {:3} {:3})  soft ({:6.3} {:6.3} {:6.3})",
            c.x, c.y, c.z, a.x, a.y, a.z, s.x, s.y, s.z
        );
    }

    let mut dump = Vec::new();
    write_volume_dump(&h, &mut dump).unwrap();
    let back = read_volume_dump(dump.as_slice()).unwrap();
    println!("dump: {} bytes, f32 rounding (L2) {:.2e}", dump.len(), h.l2_distance(&back).unwrap());

    // relative depth: a bump at bin 40 of 64
    let bins: Vec<f64> = (0..REL_DEPTH_BINS).map(|k| (-((k as f64 - 40.0).powi(2)) / 4.0).exp()).collect();
    let rel = RelDepthHeatmap::with_default_range(bins).unwrap();
    println!("relative depth: {:.1} mm", decode_rel_depth(&rel));
}
