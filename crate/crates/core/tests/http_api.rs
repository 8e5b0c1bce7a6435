use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use handrig::dataset_io::{validate_dataset, write_dataset};
use handrig::geometry::project;
use handrig::server::router;
use handrig::service::AnnotationService;
use handrig::synthrig::{generate_rig, synth_dataset, RigSpec};

struct Fixture {
    _dir: tempfile::TempDir,
    data: std::path::PathBuf,
    app: axum::Router,
    ds: handrig::dataset_io::Dataset,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let rig = generate_rig(&RigSpec { n_cameras: 16, ..RigSpec::default() }).unwrap();
    let ds = synth_dataset(&rig, 2, 3);
    let data = dir.path().join("data.json");
    write_dataset(&ds, &data).unwrap();
    let svc = AnnotationService::open(&data, &dir.path().join("state"), None).unwrap();
    Fixture { _dir: dir, data, app: router(svc), ds }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn pixel(fx: &Fixture, frame: u64, view: &str, joint: usize) -> (f64, f64) {
    let r = fx.ds.records.iter().find(|r| r.frame_id == frame && r.camera_id == view).unwrap();
    let uv = project(&r.joints_world[joint], &r.camera).unwrap();
    (uv.x, uv.y)
}

#[tokio::test]
async fn click_triangulate_commit_flow() {
    let fx = fixture();
    let (status, views) = call(&fx.app, "GET", "/frames/0/1/views", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(views["format_version"], "1");
    assert_eq!(views["default_views"].as_array().unwrap().len(), 6);

    let (status, session) = call(&fx.app, "POST", "/sessions", Some(json!({"capture_id": 0, "frame_id": 1}))).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = session["session_id"].as_str().unwrap().to_string();
    let session_views: Vec<String> = serde_json::from_value(session["views"].clone()).unwrap();
    assert_eq!(session["joints"][0]["status"], "unclicked");

    let mut version = session["version"].as_u64().unwrap();
    for joint in [0usize, 20] {
        for view in &session_views[..2] {
            let (u, v) = pixel(&fx, 1, view, joint);
            let body = json!({"joint_id": joint, "view_id": view, "u": u, "v": v, "expected_version": version});
            let (status, resp) = call(&fx.app, "POST", &format!("/sessions/{id}/clicks"), Some(body)).await;
            assert_eq!(status, StatusCode::OK, "{resp}");
            version = resp["version"].as_u64().unwrap();
        }
    }
    let (_, state) = call(&fx.app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["joints"][20]["status"], "triangulated");
    let reps = state["joints"][20]["reprojections"].as_array().unwrap();
    assert_eq!(reps.len(), 6);
    let third = reps[2]["uv"].as_array().unwrap();
    let (u, v) = pixel(&fx, 1, &session_views[2], 20);
    assert!((third[0].as_f64().unwrap() - u).abs() < 1e-3 && (third[1].as_f64().unwrap() - v).abs() < 1e-3);

    let (status, commit) = call(&fx.app, "POST", &format!("/sessions/{id}/commit"), None).await;
    assert_eq!(status, StatusCode::OK, "{commit}");
    assert_eq!(commit["valid_joints"], 2);
    assert!(validate_dataset(&fx.data).is_clean());

    let (status, img) = {
        let req = Request::builder()
            .uri(format!("/images/{}/0_1", session_views[0]))
            .body(Body::empty())
            .unwrap();
        let resp = fx.app.clone().oneshot(req).await.unwrap();
        let ct = resp.headers()["content-type"].to_str().unwrap().to_string();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (ct, String::from_utf8(bytes.to_vec()).unwrap())
    };
    assert_eq!(status, "image/svg+xml");
    assert_eq!(img.matches("<circle").count(), 2);
}

#[tokio::test]
async fn structured_errors() {
    let fx = fixture();
    let (status, err) = call(&fx.app, "POST", "/sessions", Some(json!({"capture_id": 0, "frame_id": 77}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "unknown_frame");
    assert_eq!(err["format_version"], "1");
    assert_eq!(err["field"], "frame_id");

    let (_, s) = call(&fx.app, "POST", "/sessions", Some(json!({"capture_id": 0, "frame_id": 0}))).await;
    let id = s["session_id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/clicks");
    let (status, err) = call(&fx.app, "POST", &uri, Some(json!({"joint_id": 1, "view_id": "cam999", "u": 1.0, "v": 2.0}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("unknown_view")));
    let view = s["views"][0].as_str().unwrap();
    let (status, err) = call(&fx.app, "POST", &uri, Some(json!({"joint": "X_T9", "view_id": view, "u": 1.0, "v": 2.0}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("unknown_joint")));
    let (status, err) = call(&fx.app, "POST", &uri, Some(json!({"joint_id": 1, "view_id": view, "u": "left", "v": 2.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "u");
    let (status, err) = call(&fx.app, "POST", &uri, Some(json!({"joint_id": 1, "view_id": view, "u": 1.0, "v": 2.0, "expected_version": 40}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("version_conflict")));
    let (status, err) = call(&fx.app, "POST", &format!("/sessions/{id}/commit"), None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("nothing_to_commit")));
    let (status, err) = call(&fx.app, "GET", "/sessions/s999999", None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_session")));
    let (status, _) = call(&fx.app, "GET", "/images/cam000/zero", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn undo_round_trip() {
    let fx = fixture();
    let (_, s) = call(&fx.app, "POST", "/sessions", Some(json!({"capture_id": 0, "frame_id": 0, "views": ["cam001", "cam005", "cam009"]}))).await;
    let id = s["session_id"].as_str().unwrap();
    assert_eq!(s["views"].as_array().unwrap().len(), 3);
    let (u, v) = pixel(&fx, 0, "cam005", 20);
    let (_, r) = call(&fx.app, "POST", &format!("/sessions/{id}/clicks"), Some(json!({"joint": "R_wrist", "view_id": "cam005", "u": u, "v": v}))).await;
    assert_eq!(r["joint"]["status"], "underdetermined");
    let (status, after) = call(&fx.app, "POST", &format!("/sessions/{id}/undo"), Some(json!({}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after["joints"][20]["status"], "unclicked");
    let (_, schema) = call(&fx.app, "GET", "/schema", None).await;
    assert_eq!(schema["joints"].as_array().unwrap().len(), 42);
}
