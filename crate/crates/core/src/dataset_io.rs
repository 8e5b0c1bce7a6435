//! Annotation and prediction documents: reading, writing, validation.
//!
//! One JSON document per split. Field names follow the public release where
//! they exist (see [`RELEASE_FIELD_MAP`]); the layout is described in
//! `docs/dataset_format.md`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, BBox, CameraView, GeometryError, MIN_DEPTH_MM};
use crate::objectives::{EvalSample, FramePrediction, FrameTruth};
use crate::pose::{Hand, HandPair, Handedness, Pose3D, JOINTS_PER_HAND, NUM_JOINTS};
use crate::triangulation::{Detection2DSet, RansacConfig, TriangulationResult};
use crate::FORMAT_VERSION;

/// Reprojected world joints may differ from stored `joints_img` by this much.
pub const REPROJECTION_TOLERANCE_PX: f64 = 1.0;
/// Copies of one frame's world joints stored under different cameras must
/// agree to within this distance.
pub const CONSISTENCY_TOLERANCE_MM: f64 = 1.0;

/// Release field name → name used here. Only names that differ are listed;
/// an adapter for release files should rename through this table and
/// nothing else.
pub const RELEASE_FIELD_MAP: &[(&str, &str)] = &[
    ("capture", "capture_id"),
    ("frame_idx", "frame_id"),
    ("camera", "camera_id"),
    ("subject", "subject_id"),
    ("cam_param", "cameras"),
    ("world_coord", "joints_world"),
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("schema violation in {field}: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("{0} is locked by another writer")]
    Locked(PathBuf),
}

fn schema(field: impl Into<String>, reason: impl Into<String>) -> DatasetError {
    DatasetError::SchemaViolation {
        field: field.into(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandType {
    Right,
    Left,
    Interacting,
}

impl HandType {
    /// Which hands the annotation says are in the image.
    pub fn presence(self) -> HandPair<bool> {
        match self {
            HandType::Right => HandPair::new(true, false),
            HandType::Left => HandPair::new(false, true),
            HandType::Interacting => HandPair::new(true, true),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "Train(H)")]
    TrainH,
    #[serde(rename = "Train(M)")]
    TrainM,
    #[serde(rename = "Train(H+M)")]
    TrainHM,
    #[serde(rename = "Val(M)")]
    ValM,
    #[serde(rename = "Test(H)")]
    TestH,
    #[serde(rename = "Test(M)")]
    TestM,
    #[serde(rename = "Test(H+M)")]
    TestHM,
}

/// Records are unique per (capture, frame, camera).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub capture_id: u64,
    pub frame_id: u64,
    pub camera_id: String,
}

impl std::fmt::Display for RecordKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.capture_id, self.frame_id, self.camera_id)
    }
}

/// One image of one hand (or hand pair) seen by one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub capture_id: u64,
    pub frame_id: u64,
    pub camera_id: String,
    pub camera_type: String,
    pub subject_id: u64,
    pub file_name: String,
    pub bbox: BBox,
    pub hand_type: HandType,
    pub hand_type_valid: bool,
    /// 42 joints in world mm. Invalid joints carry whatever the producer
    /// wrote (zeros by convention).
    pub joints_world: Vec<Vector3<f64>>,
    pub joint_valid: Vec<bool>,
    /// Optional 2D annotation at the stored resolution, checked against the
    /// projection of `joints_world`.
    pub joints_img: Option<Vec<Vector2<f64>>>,
    /// Camera of this record; its `view_id` equals `camera_id`.
    pub camera: CameraView,
}

impl AnnotationRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            capture_id: self.capture_id,
            frame_id: self.frame_id,
            camera_id: self.camera_id.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let at = |f: &str| format!("{}: {f}", self.key());
        if self.joints_world.len() != NUM_JOINTS {
            return Err(schema(at("joints_world"), format!("expected {NUM_JOINTS} joints, got {}", self.joints_world.len())));
        }
        if self.joint_valid.len() != NUM_JOINTS {
            return Err(schema(at("joint_valid"), format!("expected {NUM_JOINTS} flags, got {}", self.joint_valid.len())));
        }
        if let Some(j) = self.joints_world.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(schema(at(&format!("joints_world[{j}]")), "non-finite coordinate"));
        }
        if let Some(img) = &self.joints_img {
            if img.len() != NUM_JOINTS {
                return Err(schema(at("joints_img"), format!("expected {NUM_JOINTS} points, got {}", img.len())));
            }
            if let Some(j) = img.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(schema(at(&format!("joints_img[{j}]")), "non-finite coordinate"));
            }
        }
        let b = &self.bbox;
        if !(b.w > 0.0 && b.h > 0.0 && b.x.is_finite() && b.y.is_finite() && b.w.is_finite() && b.h.is_finite()) {
            return Err(schema(at("bbox"), format!("width and height must be positive, got {b:?}")));
        }
        if self.hand_type == HandType::Interacting
            && self.hand_type_valid
            && !(self.joint_valid[Hand::Right.root_index()] && self.joint_valid[Hand::Left.root_index()])
        {
            return Err(schema(at("hand_type"), "interacting requires both wrists valid or hand_type_valid = false"));
        }
        if self.camera.view_id() != self.camera_id {
            return Err(schema(at("camera"), format!("view id {} does not match camera_id", self.camera.view_id())));
        }
        Ok(())
    }

    /// Per-hand pose in this record's camera space.
    pub fn pose_camera(&self, hand: Hand) -> Pose3D {
        let r = hand.offset()..hand.offset() + JOINTS_PER_HAND;
        Pose3D {
            joints: self.joints_world[r.clone()].iter().map(|p| self.camera.to_camera(p)).collect(),
            valid: self.joint_valid[r].to_vec(),
        }
    }

    /// Ground truth for evaluation, in camera space.
    pub fn frame_truth(&self) -> FrameTruth {
        let presence = self.hand_type.presence();
        let poses = presence.map(|hand, present| present.then(|| self.pose_camera(hand)));
        let z_rel = match (&poses.right, &poses.left) {
            (Some(r), Some(l)) => r.root().zip(l.root()).map(|(r, l)| l.z - r.z),
            _ => None,
        };
        FrameTruth {
            presence,
            heatmaps: HandPair::default(),
            z_rel,
            poses,
        }
    }
}

/// Records plus optional split tag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub split: Option<Split>,
    pub records: Vec<AnnotationRecord>,
}

// ---- document layout ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    format_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    images: Vec<ImageEntry>,
    annotations: Vec<AnnotationEntry>,
    /// capture → camera id → parameters
    cameras: BTreeMap<u64, BTreeMap<String, CameraEntry>>,
    /// capture → frame → camera id → 42 world joints
    joints_world: BTreeMap<u64, BTreeMap<u64, BTreeMap<String, Vec<[f64; 3]>>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageEntry {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    capture_id: u64,
    frame_id: u64,
    camera_id: String,
    camera_type: String,
    subject_id: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationEntry {
    id: u64,
    image_id: u64,
    bbox: [f64; 4],
    hand_type: HandType,
    hand_type_valid: bool,
    joint_valid: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joints_img: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraEntry {
    campos: [f64; 3],
    /// Row-major world → camera rotation.
    camrot: [[f64; 3]; 3],
    focal: [f64; 2],
    princpt: [f64; 2],
}

impl CameraEntry {
    fn from_view(cam: &CameraView) -> Self {
        let r = cam.camrot();
        Self {
            campos: [cam.campos().x, cam.campos().y, cam.campos().z],
            camrot: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            focal: cam.focal(),
            princpt: cam.princpt(),
        }
    }

    fn to_view(&self, camera_id: &str, image_size: [u32; 2]) -> Result<CameraView, GeometryError> {
        CameraView::new(
            camera_id,
            Vector3::from(self.campos),
            Matrix3::from_fn(|r, c| self.camrot[r][c]),
            self.focal,
            self.princpt,
            image_size,
        )
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        DatasetError::Parse {
            location: format!("{path} (line {}, column {})", inner.line(), inner.column()),
            message: inner.to_string(),
        }
    })
}

fn check_version(v: &str) -> Result<(), DatasetError> {
    if v != FORMAT_VERSION {
        return Err(schema("format_version", format!("unsupported version {v:?}, expected {FORMAT_VERSION:?}")));
    }
    Ok(())
}

/// Parse and fully validate an annotation document.
pub fn parse_dataset(text: &str) -> Result<Dataset, DatasetError> {
    let doc: DatasetDoc = parse_json(text)?;
    check_version(&doc.format_version)?;
    let images: HashMap<u64, &ImageEntry> = doc.images.iter().map(|i| (i.id, i)).collect();
    if images.len() != doc.images.len() {
        return Err(schema("images", "duplicate image id"));
    }
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(doc.annotations.len());
    for (n, a) in doc.annotations.iter().enumerate() {
        let img = images
            .get(&a.image_id)
            .ok_or_else(|| schema(format!("annotations[{n}].image_id"), format!("no image with id {}", a.image_id)))?;
        let cam_entry = doc
            .cameras
            .get(&img.capture_id)
            .and_then(|c| c.get(&img.camera_id))
            .ok_or_else(|| schema(format!("cameras.{}.{}", img.capture_id, img.camera_id), "missing camera"))?;
        let camera = cam_entry
            .to_view(&img.camera_id, [img.width, img.height])
            .map_err(|e| match e {
                GeometryError::InvalidCamera { field, reason, .. } => {
                    schema(format!("cameras.{}.{}.{field}", img.capture_id, img.camera_id), reason)
                }
                other => schema(format!("cameras.{}.{}", img.capture_id, img.camera_id), other.to_string()),
            })?;
        let joints = doc
            .joints_world
            .get(&img.capture_id)
            .and_then(|f| f.get(&img.frame_id))
            .and_then(|c| c.get(&img.camera_id))
            .ok_or_else(|| {
                schema(
                    format!("joints_world.{}.{}.{}", img.capture_id, img.frame_id, img.camera_id),
                    "missing world joints",
                )
            })?;
        let record = AnnotationRecord {
            capture_id: img.capture_id,
            frame_id: img.frame_id,
            camera_id: img.camera_id.clone(),
            camera_type: img.camera_type.clone(),
            subject_id: img.subject_id,
            file_name: img.file_name.clone(),
            bbox: BBox::new(a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]),
            hand_type: a.hand_type,
            hand_type_valid: a.hand_type_valid,
            joints_world: joints.iter().map(|p| Vector3::from(*p)).collect(),
            joint_valid: a.joint_valid.clone(),
            joints_img: a.joints_img.as_ref().map(|v| v.iter().map(|p| Vector2::from(*p)).collect()),
            camera,
        };
        record.validate()?;
        if !seen.insert(record.key()) {
            return Err(schema(format!("annotations[{n}]"), format!("duplicate record {}", record.key())));
        }
        records.push(record);
    }
    Ok(Dataset { split: doc.split, records })
}

/// Canonical document text. Records keep their order; ids are positional.
pub fn dataset_to_string(ds: &Dataset) -> Result<String, DatasetError> {
    let mut doc = DatasetDoc {
        format_version: FORMAT_VERSION.to_string(),
        split: ds.split,
        images: Vec::with_capacity(ds.records.len()),
        annotations: Vec::with_capacity(ds.records.len()),
        cameras: BTreeMap::new(),
        joints_world: BTreeMap::new(),
    };
    for (id, r) in ds.records.iter().enumerate() {
        r.validate()?;
        let id = id as u64;
        let [width, height] = r.camera.image_size();
        doc.images.push(ImageEntry {
            id,
            file_name: r.file_name.clone(),
            width,
            height,
            capture_id: r.capture_id,
            frame_id: r.frame_id,
            camera_id: r.camera_id.clone(),
            camera_type: r.camera_type.clone(),
            subject_id: r.subject_id,
        });
        doc.annotations.push(AnnotationEntry {
            id,
            image_id: id,
            bbox: [r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h],
            hand_type: r.hand_type,
            hand_type_valid: r.hand_type_valid,
            joint_valid: r.joint_valid.clone(),
            joints_img: r.joints_img.as_ref().map(|v| v.iter().map(|p| [p.x, p.y]).collect()),
        });
        let entry = CameraEntry::from_view(&r.camera);
        let cams = doc.cameras.entry(r.capture_id).or_default();
        match cams.get(&r.camera_id) {
            Some(existing) if *existing != entry => {
                return Err(schema(
                    format!("cameras.{}.{}", r.capture_id, r.camera_id),
                    "records of one capture disagree on this camera's parameters",
                ));
            }
            Some(_) => {}
            None => {
                cams.insert(r.camera_id.clone(), entry);
            }
        }
        let slot = doc
            .joints_world
            .entry(r.capture_id)
            .or_default()
            .entry(r.frame_id)
            .or_default();
        if slot
            .insert(r.camera_id.clone(), r.joints_world.iter().map(|p| [p.x, p.y, p.z]).collect())
            .is_some()
        {
            return Err(schema(format!("records[{id}]"), format!("duplicate record {}", r.key())));
        }
    }
    let mut text = serde_json::to_string_pretty(&doc).expect("document serializes");
    text.push('\n');
    Ok(text)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_dataset(&text)
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, DatasetError> {
    Ok(read_dataset(path)?.records)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let text = dataset_to_string(ds)?;
    write_atomic(path, text.as_bytes())
}

pub fn write_annotations(records: &[AnnotationRecord], path: &Path) -> Result<(), DatasetError> {
    write_dataset(
        &Dataset {
            split: None,
            records: records.to_vec(),
        },
        path,
    )
}

/// Exclusive writer guard: `<path>.lock`, created exclusively and removed
/// on drop.
pub struct WriteLock {
    path: PathBuf,
}

impl WriteLock {
    pub fn acquire(target: &Path) -> Result<Self, DatasetError> {
        let mut name = target.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(DatasetError::Locked(target.to_path_buf())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Write via a sibling temp file and rename, holding the lock throughout.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let _lock = WriteLock::acquire(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

// ---- validation ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Unreadable,
    BehindCamera,
    OutOfImage,
    ReprojectionMismatch,
    InconsistentFrame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub record: Option<RecordKey>,
    pub joint: Option<usize>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub split: Option<Split>,
    pub records: usize,
    pub frames: usize,
    pub captures: usize,
    pub right: usize,
    pub left: usize,
    pub interacting: usize,
    pub interacting_pct: f64,
    pub valid_joint_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub format_version: String,
    pub summary: DatasetSummary,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn to_text(&self) -> String {
        let s = &self.summary;
        let mut out = format!(
            "records: {} ({} frames, {} captures){}\nhand types: right {}, left {}, interacting {} ({:.1}%)\nvalid joints: {:.1}%\nviolations: {}\n",
            s.records,
            s.frames,
            s.captures,
            s.split.map(|sp| format!(", split {}", serde_json::to_value(sp).unwrap().as_str().unwrap())).unwrap_or_default(),
            s.right,
            s.left,
            s.interacting,
            s.interacting_pct,
            100.0 * s.valid_joint_fraction,
            self.violations.len()
        );
        for v in &self.violations {
            let rec = v.record.as_ref().map(|k| format!(" {k}")).unwrap_or_default();
            let joint = v.joint.map(|j| format!(" joint {j}")).unwrap_or_default();
            out.push_str(&format!("  {:?}{rec}{joint}: {}\n", v.kind, v.detail));
        }
        out
    }
}

fn summarize(ds: &Dataset) -> DatasetSummary {
    let n = ds.records.len();
    let count = |t: HandType| ds.records.iter().filter(|r| r.hand_type == t).count();
    let frames: std::collections::BTreeSet<_> = ds.records.iter().map(|r| (r.capture_id, r.frame_id)).collect();
    let captures: std::collections::BTreeSet<_> = ds.records.iter().map(|r| r.capture_id).collect();
    let valid: usize = ds.records.iter().map(|r| r.joint_valid.iter().filter(|v| **v).count()).sum();
    let interacting = count(HandType::Interacting);
    DatasetSummary {
        split: ds.split,
        records: n,
        frames: frames.len(),
        captures: captures.len(),
        right: count(HandType::Right),
        left: count(HandType::Left),
        interacting,
        interacting_pct: if n == 0 { 0.0 } else { 100.0 * interacting as f64 / n as f64 },
        valid_joint_fraction: if n == 0 { 0.0 } else { valid as f64 / (n * NUM_JOINTS) as f64 },
    }
}

/// Geometric checks on already-parsed records.
pub fn validate_records(ds: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    for r in &ds.records {
        for j in 0..NUM_JOINTS {
            if !r.joint_valid[j] {
                continue;
            }
            let mut flag = |kind, detail: String| {
                violations.push(Violation {
                    kind,
                    record: Some(r.key()),
                    joint: Some(j),
                    detail,
                })
            };
            let p = &r.joints_world[j];
            let depth = r.camera.to_camera(p).z;
            if depth <= MIN_DEPTH_MM {
                flag(ViolationKind::BehindCamera, format!("camera-space depth {depth:.3} mm"));
                continue;
            }
            let uv = match project(p, &r.camera) {
                Ok(uv) => uv,
                Err(e) => {
                    flag(ViolationKind::BehindCamera, e.to_string());
                    continue;
                }
            };
            if !r.camera.contains_pixel(&uv) {
                let [w, h] = r.camera.image_size();
                flag(ViolationKind::OutOfImage, format!("projects to ({:.1}, {:.1}) outside {w}x{h}", uv.x, uv.y));
            }
            if let Some(img) = &r.joints_img {
                let d = (img[j] - uv).norm();
                if d > REPROJECTION_TOLERANCE_PX {
                    flag(ViolationKind::ReprojectionMismatch, format!("stored 2D point is {d:.3} px from the projection"));
                }
            }
        }
    }
    let mut by_frame: BTreeMap<(u64, u64), Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in &ds.records {
        by_frame.entry((r.capture_id, r.frame_id)).or_default().push(r);
    }
    for group in by_frame.values() {
        let first = group[0];
        for other in &group[1..] {
            let (j, d) = (0..NUM_JOINTS)
                .map(|j| (j, (first.joints_world[j] - other.joints_world[j]).norm()))
                .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
            if d > CONSISTENCY_TOLERANCE_MM {
                violations.push(Violation {
                    kind: ViolationKind::InconsistentFrame,
                    record: Some(other.key()),
                    joint: Some(j),
                    detail: format!("world joints differ from camera {} by {d:.3} mm", first.camera_id),
                });
            }
        }
    }
    ValidationReport {
        format_version: FORMAT_VERSION.to_string(),
        summary: summarize(ds),
        violations,
    }
}

/// Read and check a dataset. Never fails: unreadable input becomes a
/// violation in the report.
pub fn validate_dataset(path: &Path) -> ValidationReport {
    match read_dataset(path) {
        Ok(ds) => validate_records(&ds),
        Err(e) => ValidationReport {
            format_version: FORMAT_VERSION.to_string(),
            summary: DatasetSummary::default(),
            violations: vec![Violation {
                kind: ViolationKind::Unreadable,
                record: None,
                joint: None,
                detail: e.to_string(),
            }],
        },
    }
}

/// Union keyed by (capture, frame, camera); `h` wins collisions. Order: all
/// of `h`, then the remaining records of `m` in their original order.
pub fn merge_splits(h: &[AnnotationRecord], m: &[AnnotationRecord]) -> Vec<AnnotationRecord> {
    let keys: std::collections::HashSet<RecordKey> = h.iter().map(|r| r.key()).collect();
    h.iter()
        .chain(m.iter().filter(|r| !keys.contains(&r.key())))
        .cloned()
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverwriteRule {
    /// Human annotations replace machine annotations with the same key.
    PreferHuman,
}

/// Which records make up a split, and how collisions were resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split: Split,
    pub record_ids: Vec<RecordKey>,
    pub overwrite_rule: Option<OverwriteRule>,
}

impl SplitManifest {
    pub fn of(split: Split, records: &[AnnotationRecord]) -> Self {
        Self {
            split,
            record_ids: records.iter().map(|r| r.key()).collect(),
            overwrite_rule: None,
        }
    }

    /// Manifest of `merge_splits(h, m)` for the combined split.
    pub fn merged(split: Split, h: &[AnnotationRecord], m: &[AnnotationRecord]) -> (Self, Vec<AnnotationRecord>) {
        let records = merge_splits(h, m);
        let mut manifest = Self::of(split, &records);
        manifest.overwrite_rule = Some(OverwriteRule::PreferHuman);
        (manifest, records)
    }
}

// ---- predictions ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub capture_id: u64,
    pub frame_id: u64,
    pub camera_id: String,
    pub h_r: f64,
    pub h_l: f64,
    /// 42 camera-space joints in mm; `null` where the hand was not predicted.
    pub joints_cam: Vec<Option<[f64; 3]>>,
    pub z_rel: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub format_version: String,
    pub predictions: Vec<PredictionRecord>,
}

impl PredictionRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            capture_id: self.capture_id,
            frame_id: self.frame_id,
            camera_id: self.camera_id.clone(),
        }
    }

    /// The prediction a perfect model would make for `r`.
    pub fn from_truth(r: &AnnotationRecord) -> Self {
        let presence = r.hand_type.presence();
        let truth = r.frame_truth();
        let joints_cam = (0..NUM_JOINTS)
            .map(|j| {
                let hand = if j < JOINTS_PER_HAND { Hand::Right } else { Hand::Left };
                (*presence.get(hand) && r.joint_valid[j]).then(|| {
                    let p = r.camera.to_camera(&r.joints_world[j]);
                    [p.x, p.y, p.z]
                })
            })
            .collect();
        Self {
            capture_id: r.capture_id,
            frame_id: r.frame_id,
            camera_id: r.camera_id.clone(),
            h_r: if presence.right { 1.0 } else { 0.0 },
            h_l: if presence.left { 1.0 } else { 0.0 },
            joints_cam,
            z_rel: truth.z_rel,
        }
    }

    pub fn to_frame_prediction(&self) -> Result<FramePrediction, DatasetError> {
        let field = |f: &str| format!("predictions[{}].{f}", self.key());
        if self.joints_cam.len() != NUM_JOINTS {
            return Err(schema(field("joints_cam"), format!("expected {NUM_JOINTS} entries, got {}", self.joints_cam.len())));
        }
        let handedness = Handedness::new(self.h_r, self.h_l).map_err(|e| schema(field("h_r/h_l"), e.to_string()))?;
        let poses = HandPair::new(Hand::Right, Hand::Left).map(|_, hand| {
            let block = &self.joints_cam[hand.offset()..hand.offset() + JOINTS_PER_HAND];
            if block.iter().all(Option::is_none) {
                return None;
            }
            Some(Pose3D {
                joints: block.iter().map(|p| p.map_or_else(Vector3::zeros, Vector3::from)).collect(),
                valid: block.iter().map(Option::is_some).collect(),
            })
        });
        Ok(FramePrediction {
            poses,
            handedness,
            z_rel: self.z_rel,
        })
    }
}

pub fn parse_predictions(text: &str) -> Result<PredictionFile, DatasetError> {
    let file: PredictionFile = parse_json(text)?;
    check_version(&file.format_version)?;
    Ok(file)
}

pub fn read_predictions(path: &Path) -> Result<PredictionFile, DatasetError> {
    parse_predictions(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn predictions_to_string(preds: &[PredictionRecord]) -> String {
    let file = PredictionFile {
        format_version: FORMAT_VERSION.to_string(),
        predictions: preds.to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("predictions serialize");
    text.push('\n');
    text
}

pub fn write_predictions(preds: &[PredictionRecord], path: &Path) -> Result<(), DatasetError> {
    write_atomic(path, predictions_to_string(preds).as_bytes())
}

/// Pair each ground-truth record with its prediction. Records without a
/// prediction are evaluated as "nothing predicted" (handedness 0, no poses).
pub fn build_eval_batch(gt: &[AnnotationRecord], preds: &[PredictionRecord]) -> Result<Vec<EvalSample>, DatasetError> {
    let by_key: HashMap<RecordKey, &PredictionRecord> = preds.iter().map(|p| (p.key(), p)).collect();
    gt.iter()
        .map(|r| {
            let pred = match by_key.get(&r.key()) {
                Some(p) => p.to_frame_prediction()?,
                None => FramePrediction {
                    poses: HandPair::default(),
                    handedness: Handedness::new(0.0, 0.0).expect("zero is a probability"),
                    z_rel: None,
                },
            };
            Ok(EvalSample {
                pred,
                truth: r.frame_truth(),
            })
        })
        .collect()
}

// ---- small versioned documents used by the command line ----

/// Documents carrying a `format_version` field.
pub trait Versioned {
    fn format_version(&self) -> &str;
}

/// Read a versioned JSON document, naming the offending path on errors.
pub fn read_versioned<T: serde::de::DeserializeOwned + Versioned>(path: &Path) -> Result<T, DatasetError> {
    let doc: T = parse_json(&fs::read_to_string(path).map_err(io_err(path))?)?;
    check_version(doc.format_version())?;
    Ok(doc)
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).expect("document serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub format_version: String,
    pub cameras: Vec<CameraView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFile {
    pub format_version: String,
    pub detections: Vec<Detection2DSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTriangulation {
    pub joint_id: usize,
    pub name: String,
    pub result: Option<TriangulationResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangulationFile {
    pub format_version: String,
    pub ransac: RansacConfig,
    pub triangulated: usize,
    pub joints: Vec<JointTriangulation>,
}

macro_rules! versioned {
    ($($t:ty),*) => {$(
        impl Versioned for $t {
            fn format_version(&self) -> &str {
                &self.format_version
            }
        }
    )*};
}
versioned!(CameraFile, DetectionFile, TriangulationFile, PredictionFile);

impl CameraFile {
    pub fn new(cameras: Vec<CameraView>) -> Self {
        Self { format_version: FORMAT_VERSION.into(), cameras }
    }
}

impl DetectionFile {
    pub fn new(detections: Vec<Detection2DSet>) -> Self {
        Self { format_version: FORMAT_VERSION.into(), detections }
    }
}
