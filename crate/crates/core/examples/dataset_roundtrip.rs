//! Write a synthetic annotation file, read it back, validate it, then break
//! one camera copy and validate again.
//!
//! ```text
//! cargo run --example dataset_roundtrip
//! ```

use handrig::dataset_io::{read_dataset, validate_dataset, validate_records, write_dataset};
use handrig::synthrig::{generate_rig, synth_dataset, RigSpec};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("annotations.json");
    let rig = generate_rig(&RigSpec { n_cameras: 10, ..RigSpec::default() }).unwrap();
    write_dataset(&synth_dataset(&rig, 3, 1), &path).unwrap();
    println!("{} bytes written", std::fs::metadata(&path).unwrap().len());
    print!("{}", validate_dataset(&path).to_text());

    let mut ds = read_dataset(&path).unwrap();
    ds.records[4].joints_world[7].z += 3.0;
    println!("\nafter moving one joint in one camera copy:");
    print!("{}", validate_records(&ds).to_text());
}
