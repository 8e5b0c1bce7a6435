use std::path::Path;
use std::process::{Command, Output};

fn handrig(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handrig")).args(args).current_dir(dir).output().unwrap()
}

fn synth(dir: &Path) {
    let out = handrig(dir, &["synth", "--out", "d.json", "--frames", "2", "--rig-size", "10", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let ok = handrig(dir.path(), &["validate", "--dataset", "d.json"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("violations: 0"));

    let text = std::fs::read_to_string(dir.path().join("d.json")).unwrap();
    std::fs::write(dir.path().join("bad.json"), text.replacen("\"focal\": [", "\"focal\": [-", 1)).unwrap();
    let bad = handrig(dir.path(), &["validate", "--dataset", "bad.json", "--report", "r.json"]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["violations"][0]["kind"], "unreadable");

    let missing = handrig(dir.path(), &["validate", "--dataset", "nope.json"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = handrig(dir.path(), &["evaluate", "--pred", "missing.json", "--gt", "d.json", "--report", "r.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    std::fs::write(dir.path().join("det.json"), r#"{"format_version": "1", "detections": [{"joint_id": 0, "observations": [{"view_id": "x", "u": 1, "v": 2, "confidence": 1.0}]}]}"#).unwrap();
    let out = handrig(dir.path(), &["triangulate", "--detections", "det.json", "--cameras", "d.json", "--out", "t.json"]);
    assert!(!out.status.success());

    let out = handrig(dir.path(), &["sweep", "--views", "2,x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = handrig(dir.path(), &["synth", "--out", "a.json", "--detections", "det2.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn wrong_format_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = handrig(dir.path(), &["synth", "--out", "d.json", "--frames", "1", "--rig-size", "8", "--detections", "det.json", "--cameras", "c.json"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("c.json")).unwrap();
    std::fs::write(dir.path().join("c.json"), text.replace("\"format_version\": \"1\"", "\"format_version\": \"9\"")).unwrap();
    let out = handrig(dir.path(), &["triangulate", "--detections", "det.json", "--cameras", "c.json", "--out", "t.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("format_version"));
}
