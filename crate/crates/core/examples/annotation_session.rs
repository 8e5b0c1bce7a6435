//! Drive the annotation service without HTTP: open a session, click one
//! joint in two views, inspect the reprojections and commit.
//!
//! ```text
//! cargo run --example annotation_session
//! ```

use handrig::dataset_io::{read_dataset, validate_dataset, write_dataset};
use handrig::geometry::project;
use handrig::service::{AnnotationService, ClickRequest, OpenRequest, VersionRequest};
use handrig::synthrig::{generate_rig, synth_dataset, RigSpec};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.json");
    let rig = generate_rig(&RigSpec { n_cameras: 16, ..RigSpec::default() }).unwrap();
    write_dataset(&synth_dataset(&rig, 1, 8), &data).unwrap();
    let truth = read_dataset(&data).unwrap();

    let svc = AnnotationService::open(&data, &dir.path().join("sessions"), None).unwrap();
    let session = svc.open_session(&OpenRequest { capture_id: 0, frame_id: 0, views: None }).unwrap();
    println!("session {} over views {}", session.session_id, session.views.join(" "));

    let joint = "R_wrist";
    for view in &session.views[..2] {
        let record = truth.records.iter().find(|r| &r.camera_id == view).unwrap();
        let uv = project(&record.joints_world[20], &record.camera).unwrap();
        let req = ClickRequest { joint: Some(joint.into()), view_id: view.clone(), u: uv.x, v: uv.y, ..Default::default() };
        let resp = svc.submit_click(&session.session_id, &req).unwrap();
        println!("click in {view}: {joint} is {:?}", resp.joint.status);
    }
    let state = svc.get_session(&session.session_id).unwrap();
    for r in state.joints[20].reprojections.iter().flatten() {
        if let Some(uv) = r.uv {
            println!("  {} -> ({:.1}, {:.1})", r.view_id, uv.x, uv.y);
        }
    }
    let commit = svc.commit_frame(&session.session_id, &VersionRequest::default()).unwrap();
    println!("committed {} records, {} valid joints", commit.records_written, commit.valid_joints);
    println!("dataset clean: {}", validate_dataset(&data).is_clean());
}
