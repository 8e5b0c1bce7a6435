//! Take a two-hand pose into crop space and lift it back to 3D with each
//! combination of hand presence.
//!
//! ```text
//! cargo run --example assemble_pose
//! ```

use nalgebra::Vector2;

use handrig::geometry::{make_crop_transform, project, BBox, IntrinsicsSource};
use handrig::pose::{
    assemble_3d, to_pose25d, DepthProvenance, DepthValue, Hand, HandPair, Handedness, Pose3D, RootDepths,
    JOINTS_PER_HAND,
};
use handrig::synthrig::{generate_hand, generate_rig, Articulation, HandSelection, RigSpec};

fn main() {
    let rig = generate_rig(&RigSpec { n_cameras: 8, ..RigSpec::default() }).unwrap();
    let cam = &rig[3];
    let hands = generate_hand(2, HandSelection::Both, Articulation::Random);
    let in_cam = |range: std::ops::Range<usize>| Pose3D::all_valid(hands.joints[range].iter().map(|p| cam.to_camera(p)).collect()).unwrap();
    let truth = HandPair::new(in_cam(0..JOINTS_PER_HAND), in_cam(JOINTS_PER_HAND..2 * JOINTS_PER_HAND));

    let pixels: Vec<Vector2<f64>> = hands.joints.iter().map(|p| project(p, cam).unwrap()).collect();
    let crop = make_crop_transform(&BBox::around(&pixels, 0.15, 64.0).unwrap(), [256, 256], None).unwrap();
    let (right, z_r) = to_pose25d(&truth.right, Hand::Right, &crop, cam.intrinsics()).unwrap();
    let (left, z_l) = to_pose25d(&truth.left, Hand::Left, &crop, cam.intrinsics()).unwrap();
    let depths = RootDepths {
        right: Some(DepthValue::new(z_r, DepthProvenance::GroundTruth)),
        left: Some(DepthValue::new(z_l, DepthProvenance::GroundTruth)),
        rel: Some(DepthValue::new(z_l - z_r, DepthProvenance::NetworkRelative)),
    };
    println!("root depths: right {z_r:.1} mm, left {z_l:.1} mm");

    for (hr, hl) in [(0.95, 0.9), (0.95, 0.2), (0.3, 0.8), (0.1, 0.1)] {
        let h = Handedness::new(hr, hl).unwrap();
        let out = assemble_3d(HandPair::new(&right, &left), &h, &depths, &crop, IntrinsicsSource::Camera(cam)).unwrap();
        let report = |hand: Hand| match out.get(hand) {
            Some(p) => {
                let err = p.joints.iter().zip(&truth.get(hand).joints).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                format!("{} max error {err:.1e} mm", hand.name())
            }
            None => format!("{} absent", hand.name()),
        };
        println!("h = ({hr}, {hl}): {}; {}", report(Hand::Right), report(Hand::Left));
    }
}
