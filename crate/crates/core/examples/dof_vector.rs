//! Joint angles of a flat and a randomly articulated hand.
//!
//! ```text
//! cargo run --example dof_vector
//! ```

use handrig::pose::{compute_dof_vector, Hand, Pose3D, DOF_LABELS, JOINTS_PER_HAND};
use handrig::synthrig::{generate_hand, Articulation, HandSelection};

fn main() {
    let flat = generate_hand(1, HandSelection::Right, Articulation::Neutral);
    let bent = generate_hand(1, HandSelection::Left, Articulation::Random);
    let a = compute_dof_vector(&Pose3D::all_valid(flat.joints[..JOINTS_PER_HAND].to_vec()).unwrap(), Hand::Right).unwrap();
    let b = compute_dof_vector(&Pose3D::all_valid(bent.joints[JOINTS_PER_HAND..].to_vec()).unwrap(), Hand::Left).unwrap();
    println!("{:<10} {:>8} {:>8}", "dof", "flat", "random");
    for (k, label) in DOF_LABELS.iter().enumerate() {
        println!("{label:<10} {:>8.1} {:>8.1}", a[k].to_degrees(), b[k].to_degrees());
    }
}
