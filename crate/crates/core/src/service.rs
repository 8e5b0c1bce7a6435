//! Human annotation sessions: clicks in a few views of one frame are
//! triangulated live and reprojected into every view.
//!
//! Each session is an append-only journal (`journal.jsonl`) plus a
//! periodic `snapshot.json`. State is always rebuilt by replaying events, so
//! a crash loses at most the click being written. Triangulation results are
//! recomputed on replay rather than stored.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{self, AnnotationRecord, Dataset, DatasetError, HandType};
use crate::geometry::{project, BBox, CameraView, MIN_DEPTH_MM};
use crate::pose::{schema, Hand, JOINTS_PER_HAND, NUM_JOINTS};
use crate::triangulation::{
    reproject_all, triangulate_dlt, Detection2DSet, Observation, Reprojection, TriangulationResult,
    REFERENCE_IMAGE_WIDTH,
};
use crate::FORMAT_VERSION;

/// Number of views a session shows by default.
pub const DEFAULT_SESSION_VIEWS: usize = 6;
/// A snapshot is written after this many journal events.
pub const SNAPSHOT_EVERY: u64 = 16;
/// Residual (px at 4096 width) above which a live result is flagged.
pub const RESIDUAL_FLAG_PX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown frame {capture_id}/{frame_id}")]
    UnknownFrame { capture_id: u64, frame_id: u64 },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("view {0} is not part of this session or frame")]
    UnknownView(String),
    #[error("joint {0} is not in the schema")]
    UnknownJoint(String),
    #[error("session is at version {current}, request expected {expected}")]
    VersionConflict { expected: u64, current: u64 },
    #[error("no joint has been triangulated")]
    NothingToCommit,
    #[error("invalid request: {message}")]
    InvalidRequest { field: Option<String>, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("journal {path}: {source}")]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownFrame { .. } => "unknown_frame",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownView(_) => "unknown_view",
            ServiceError::UnknownJoint(_) => "unknown_joint",
            ServiceError::VersionConflict { .. } => "version_conflict",
            ServiceError::NothingToCommit => "nothing_to_commit",
            ServiceError::InvalidRequest { .. } => "invalid_request",
            ServiceError::Dataset(DatasetError::Locked(_)) => "dataset_locked",
            ServiceError::Dataset(_) => "dataset_error",
            ServiceError::Journal { .. } => "journal_error",
        }
    }

    /// Request field the error refers to, if any.
    pub fn field(&self) -> Option<String> {
        match self {
            ServiceError::UnknownFrame { .. } => Some("frame_id".into()),
            ServiceError::UnknownView(_) => Some("view_id".into()),
            ServiceError::UnknownJoint(_) => Some("joint_id".into()),
            ServiceError::VersionConflict { .. } => Some("expected_version".into()),
            ServiceError::InvalidRequest { field, .. } => field.clone(),
            _ => None,
        }
    }
}

fn journal_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Journal {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub view_id: String,
    pub u: f64,
    pub v: f64,
    pub annotator_id: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl Click {
    /// Same placement, ignoring who clicked and when.
    fn same_as(&self, other: &Click) -> bool {
        self.view_id == other.view_id && self.u == other.u && self.v == other.v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Opened {
        session_id: String,
        capture_id: u64,
        frame_id: u64,
        views: Vec<String>,
    },
    Click { joint_id: usize, click: Click },
    /// Removes the most recent click event still in effect.
    Undo,
    Committed { records: usize },
}

#[derive(Serialize, Deserialize)]
struct JournalLine {
    seq: u64,
    event: Event,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointStatus {
    Unclicked,
    /// Clicked in a single view.
    Underdetermined,
    Triangulated,
    /// Triangulated and committed.
    Verified,
}

/// Replayable session state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub capture_id: u64,
    pub frame_id: u64,
    pub views: Vec<String>,
    /// Number of journal events applied.
    pub version: u64,
    /// Click events still in effect, oldest first. Undo pops the last one,
    /// which uncovers any earlier click on the same joint and view.
    pub click_log: Vec<(usize, Click)>,
    pub verified: bool,
}

impl SessionState {
    fn apply(&mut self, event: &Event) {
        self.version += 1;
        match event {
            Event::Opened { .. } => {}
            Event::Click { joint_id, click } => {
                self.click_log.push((*joint_id, click.clone()));
                self.verified = false;
            }
            Event::Undo => {
                if self.click_log.pop().is_some() {
                    self.verified = false;
                }
            }
            Event::Committed { .. } => self.verified = true,
        }
    }

    /// Current clicks of one joint: the latest per view, in first-click order.
    pub fn clicks(&self, joint_id: usize) -> Vec<Click> {
        let mut out: Vec<Click> = Vec::new();
        for (_, c) in self.click_log.iter().filter(|(j, _)| *j == joint_id) {
            match out.iter_mut().find(|o| o.view_id == c.view_id) {
                Some(slot) => *slot = c.clone(),
                None => out.push(c.clone()),
            }
        }
        out
    }

    fn from_opened(event: &Event) -> Option<Self> {
        match event {
            Event::Opened { session_id, capture_id, frame_id, views } => Some(Self {
                session_id: session_id.clone(),
                capture_id: *capture_id,
                frame_id: *frame_id,
                views: views.clone(),
                version: 0,
                click_log: Vec::new(),
                verified: false,
            }),
            _ => None,
        }
    }
}

/// Live view of one joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointView {
    pub joint_id: usize,
    pub name: String,
    pub status: JointStatus,
    pub clicks: Vec<Click>,
    pub result: Option<TriangulationResult>,
    /// Projections of `result` into every session view.
    pub reprojections: Option<Vec<Reprojection>>,
    /// Largest residual among the clicked views exceeds the flag threshold.
    pub residual_flag: bool,
    pub residual_threshold_px: f64,
    /// Why a joint with two or more clicks has no 3D point.
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub format_version: String,
    pub session_id: String,
    pub capture_id: u64,
    pub frame_id: u64,
    pub views: Vec<String>,
    pub version: u64,
    pub verified: bool,
    pub joints: Vec<JointView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickResponse {
    pub format_version: String,
    pub session_id: String,
    pub version: u64,
    /// False when the click was identical to the stored one.
    pub applied: bool,
    pub joint: JointView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitResponse {
    pub format_version: String,
    pub session_id: String,
    pub version: u64,
    pub records_written: usize,
    pub valid_joints: usize,
    pub invalid_joints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameViews {
    pub format_version: String,
    pub capture_id: u64,
    pub frame_id: u64,
    pub default_views: Vec<String>,
    pub cameras: Vec<CameraView>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OpenRequest {
    pub capture_id: u64,
    pub frame_id: u64,
    #[serde(default)]
    pub views: Option<Vec<String>>,
}

/// `joint_id` is a schema index; `joint` a schema name such as `R_I2`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickRequest {
    #[serde(default)]
    pub joint_id: Option<usize>,
    #[serde(default)]
    pub joint: Option<String>,
    pub view_id: String,
    pub u: f64,
    pub v: f64,
    #[serde(default)]
    pub annotator_id: Option<String>,
    #[serde(default)]
    pub timestamp: Option<u64>,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionRequest {
    #[serde(default)]
    pub expected_version: Option<u64>,
}

/// Greedy choice of `k` cameras with large pairwise angles between their
/// optical axes: start from the widest pair, then repeatedly add the camera
/// whose smallest angle to the chosen set is largest. Ties go to the lower
/// index; the result keeps the input order.
pub fn select_views(cams: &[CameraView], k: usize) -> Vec<String> {
    if cams.len() <= k {
        return cams.iter().map(|c| c.view_id().to_string()).collect();
    }
    let axes: Vec<Vector3<f64>> = cams.iter().map(|c| c.optical_axis()).collect();
    let angle = |a: usize, b: usize| axes[a].dot(&axes[b]).clamp(-1.0, 1.0).acos();
    let mut best = (0, 1, -1.0);
    for a in 0..cams.len() {
        for b in a + 1..cams.len() {
            let t = angle(a, b);
            if t > best.2 {
                best = (a, b, t);
            }
        }
    }
    let mut chosen = vec![best.0, best.1];
    while chosen.len() < k {
        let mut pick = (usize::MAX, -1.0);
        for c in 0..cams.len() {
            if chosen.contains(&c) {
                continue;
            }
            let m = chosen.iter().map(|&s| angle(s, c)).fold(f64::INFINITY, f64::min);
            if m > pick.1 {
                pick = (c, m);
            }
        }
        chosen.push(pick.0);
    }
    chosen.sort_unstable();
    chosen.into_iter().map(|i| cams[i].view_id().to_string()).collect()
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct SessionHandle {
    state: SessionState,
    dir: PathBuf,
    journal: File,
}

impl SessionHandle {
    fn append(&mut self, event: Event) -> Result<(), ServiceError> {
        let seq = self.state.version + 1;
        let mut line = serde_json::to_string(&JournalLine { seq, event: event.clone() }).expect("event serializes");
        line.push('\n');
        let path = self.dir.join("journal.jsonl");
        self.journal.write_all(line.as_bytes()).map_err(journal_err(&path))?;
        self.journal.sync_data().map_err(journal_err(&path))?;
        self.state.apply(&event);
        if self.state.version.is_multiple_of(SNAPSHOT_EVERY) {
            let text = serde_json::to_string_pretty(&self.state).expect("state serializes");
            dataset_io::write_atomic(&self.dir.join("snapshot.json"), text.as_bytes())?;
        }
        Ok(())
    }

    /// Rebuild from snapshot + journal. A torn final line is ignored.
    fn load(dir: &Path) -> Result<Self, ServiceError> {
        let journal_path = dir.join("journal.jsonl");
        let snapshot: Option<SessionState> = fs::read_to_string(dir.join("snapshot.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let reader = BufReader::new(File::open(&journal_path).map_err(journal_err(&journal_path))?);
        let mut state = snapshot;
        let mut good_bytes = 0u64;
        for line in reader.lines() {
            let line = line.map_err(journal_err(&journal_path))?;
            let Ok(entry) = serde_json::from_str::<JournalLine>(&line) else {
                break;
            };
            good_bytes += line.len() as u64 + 1;
            match &mut state {
                None => {
                    let mut s = SessionState::from_opened(&entry.event).ok_or_else(|| ServiceError::InvalidRequest {
                        field: None,
                        message: format!("{} does not start with an open event", journal_path.display()),
                    })?;
                    s.apply(&entry.event);
                    state = Some(s);
                }
                Some(s) if entry.seq > s.version => s.apply(&entry.event),
                Some(_) => {}
            }
        }
        let state = state.ok_or_else(|| ServiceError::InvalidRequest {
            field: None,
            message: format!("{} is empty", journal_path.display()),
        })?;
        let journal = OpenOptions::new().write(true).open(&journal_path).map_err(journal_err(&journal_path))?;
        // drop any torn tail so later appends start on a clean line
        journal.set_len(good_bytes).map_err(journal_err(&journal_path))?;
        let mut journal = journal;
        use std::io::Seek;
        journal.seek(std::io::SeekFrom::End(0)).map_err(journal_err(&journal_path))?;
        Ok(Self {
            state,
            dir: dir.to_path_buf(),
            journal,
        })
    }
}

type FrameKey = (u64, u64);

struct Store {
    path: PathBuf,
    dataset: Dataset,
}

impl Store {
    fn frame_records(&self, key: FrameKey) -> Vec<&AnnotationRecord> {
        self.dataset
            .records
            .iter()
            .filter(|r| (r.capture_id, r.frame_id) == key)
            .collect()
    }

    fn frame_cameras(&self, key: FrameKey) -> Result<Vec<CameraView>, ServiceError> {
        let cams: Vec<CameraView> = self.frame_records(key).iter().map(|r| r.camera.clone()).collect();
        if cams.is_empty() {
            return Err(ServiceError::UnknownFrame {
                capture_id: key.0,
                frame_id: key.1,
            });
        }
        Ok(cams)
    }
}

/// Dataset-backed annotation service. Cheap to clone; all clones share
/// state.
#[derive(Clone)]
pub struct AnnotationService {
    store: Arc<Mutex<Store>>,
    sessions: Arc<Mutex<HashMap<String, Arc<Mutex<SessionHandle>>>>>,
    state_dir: PathBuf,
    image_dir: Option<PathBuf>,
}

impl AnnotationService {
    /// Open `dataset` and resume every session found under `state_dir`.
    pub fn open(dataset: &Path, state_dir: &Path, image_dir: Option<&Path>) -> Result<Self, ServiceError> {
        let ds = dataset_io::read_dataset(dataset)?;
        fs::create_dir_all(state_dir).map_err(journal_err(state_dir))?;
        let mut sessions = HashMap::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(state_dir)
            .map_err(journal_err(state_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("journal.jsonl").exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            let handle = SessionHandle::load(&dir)?;
            sessions.insert(handle.state.session_id.clone(), Arc::new(Mutex::new(handle)));
        }
        Ok(Self {
            store: Arc::new(Mutex::new(Store {
                path: dataset.to_path_buf(),
                dataset: ds,
            })),
            sessions: Arc::new(Mutex::new(sessions)),
            state_dir: state_dir.to_path_buf(),
            image_dir: image_dir.map(Path::to_path_buf),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionHandle>>, ServiceError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    fn cameras_for(&self, state: &SessionState) -> Result<Vec<CameraView>, ServiceError> {
        let all = self.store.lock().unwrap().frame_cameras((state.capture_id, state.frame_id))?;
        Ok(state
            .views
            .iter()
            .filter_map(|v| all.iter().find(|c| c.view_id() == v).cloned())
            .collect())
    }

    pub fn frame_views(&self, capture_id: u64, frame_id: u64) -> Result<FrameViews, ServiceError> {
        let cameras = self.store.lock().unwrap().frame_cameras((capture_id, frame_id))?;
        Ok(FrameViews {
            format_version: FORMAT_VERSION.into(),
            capture_id,
            frame_id,
            default_views: select_views(&cameras, DEFAULT_SESSION_VIEWS),
            cameras,
        })
    }

    pub fn open_session(&self, req: &OpenRequest) -> Result<SessionView, ServiceError> {
        let cameras = self.store.lock().unwrap().frame_cameras((req.capture_id, req.frame_id))?;
        let views = match &req.views {
            Some(v) => {
                if v.len() < 2 {
                    return Err(ServiceError::InvalidRequest {
                        field: Some("views".into()),
                        message: "a session needs at least two views".into(),
                    });
                }
                for id in v {
                    if !cameras.iter().any(|c| c.view_id() == id) {
                        return Err(ServiceError::UnknownView(id.clone()));
                    }
                }
                let mut v = v.clone();
                v.dedup();
                v
            }
            None => select_views(&cameras, DEFAULT_SESSION_VIEWS),
        };
        let mut sessions = self.sessions.lock().unwrap();
        let session_id = format!("s{:06}", sessions.len() + 1);
        let dir = self.state_dir.join(&session_id);
        fs::create_dir_all(&dir).map_err(journal_err(&dir))?;
        let journal_path = dir.join("journal.jsonl");
        let journal = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&journal_path)
            .map_err(journal_err(&journal_path))?;
        let opened = Event::Opened {
            session_id: session_id.clone(),
            capture_id: req.capture_id,
            frame_id: req.frame_id,
            views,
        };
        let state = SessionState::from_opened(&opened).expect("opened event");
        let mut handle = SessionHandle { state, dir, journal };
        // the open event itself is journal entry 1
        handle.append(opened)?;
        let view = self.render(&handle.state)?;
        sessions.insert(session_id, Arc::new(Mutex::new(handle)));
        Ok(view)
    }

    pub fn get_session(&self, id: &str) -> Result<SessionView, ServiceError> {
        let handle = self.session(id)?;
        let h = handle.lock().unwrap();
        self.render(&h.state)
    }

    fn resolve_joint(req: &ClickRequest) -> Result<usize, ServiceError> {
        match (&req.joint_id, &req.joint) {
            (Some(j), _) if *j < NUM_JOINTS => Ok(*j),
            (Some(j), _) => Err(ServiceError::UnknownJoint(j.to_string())),
            (None, Some(name)) => crate::pose::joint_index(name).ok_or_else(|| ServiceError::UnknownJoint(name.clone())),
            (None, None) => Err(ServiceError::InvalidRequest {
                field: Some("joint_id".into()),
                message: "joint_id or joint is required".into(),
            }),
        }
    }

    fn check_version(state: &SessionState, expected: Option<u64>) -> Result<(), ServiceError> {
        match expected {
            Some(e) if e != state.version => Err(ServiceError::VersionConflict {
                expected: e,
                current: state.version,
            }),
            _ => Ok(()),
        }
    }

    pub fn submit_click(&self, id: &str, req: &ClickRequest) -> Result<ClickResponse, ServiceError> {
        let joint_id = Self::resolve_joint(req)?;
        if !(req.u.is_finite() && req.v.is_finite()) {
            return Err(ServiceError::InvalidRequest {
                field: Some("u".into()),
                message: "pixel coordinates must be finite".into(),
            });
        }
        let handle = self.session(id)?;
        let mut h = handle.lock().unwrap();
        if !h.state.views.contains(&req.view_id) {
            return Err(ServiceError::UnknownView(req.view_id.clone()));
        }
        let click = Click {
            view_id: req.view_id.clone(),
            u: req.u,
            v: req.v,
            annotator_id: req.annotator_id.clone().unwrap_or_else(|| "anonymous".into()),
            timestamp: req.timestamp.unwrap_or_else(now_ms),
        };
        let duplicate = h.state.clicks(joint_id).iter().any(|c| c.same_as(&click));
        if !duplicate {
            Self::check_version(&h.state, req.expected_version)?;
            h.append(Event::Click { joint_id, click })?;
        }
        let cams = self.cameras_for(&h.state)?;
        Ok(ClickResponse {
            format_version: FORMAT_VERSION.into(),
            session_id: id.to_string(),
            version: h.state.version,
            applied: !duplicate,
            joint: joint_view(&h.state, joint_id, &cams),
        })
    }

    /// Remove the most recent click still in effect.
    pub fn undo(&self, id: &str, req: &VersionRequest) -> Result<SessionView, ServiceError> {
        let handle = self.session(id)?;
        let mut h = handle.lock().unwrap();
        Self::check_version(&h.state, req.expected_version)?;
        if !h.state.click_log.is_empty() {
            h.append(Event::Undo)?;
        }
        self.render(&h.state)
    }

    /// Write world joints and per-camera validity for every camera of the
    /// frame. Joints without a 3D point are invalid everywhere.
    pub fn commit_frame(&self, id: &str, req: &VersionRequest) -> Result<CommitResponse, ServiceError> {
        let handle = self.session(id)?;
        let mut h = handle.lock().unwrap();
        Self::check_version(&h.state, req.expected_version)?;
        let session_cams = self.cameras_for(&h.state)?;
        let points: Vec<Option<Vector3<f64>>> = (0..NUM_JOINTS)
            .map(|j| joint_view(&h.state, j, &session_cams).result.map(|r| r.point_world))
            .collect();
        let valid_joints = points.iter().filter(|p| p.is_some()).count();
        if valid_joints == 0 {
            return Err(ServiceError::NothingToCommit);
        }
        let key = (h.state.capture_id, h.state.frame_id);
        let mut store = self.store.lock().unwrap();
        let mut updated = store.dataset.clone();
        let mut written = 0;
        for r in updated.records.iter_mut().filter(|r| (r.capture_id, r.frame_id) == key) {
            *r = committed_record(r, &points);
            written += 1;
        }
        dataset_io::write_dataset(&updated, &store.path)?;
        store.dataset = updated;
        drop(store);
        h.append(Event::Committed { records: written })?;
        Ok(CommitResponse {
            format_version: FORMAT_VERSION.into(),
            session_id: id.to_string(),
            version: h.state.version,
            records_written: written,
            valid_joints,
            invalid_joints: NUM_JOINTS - valid_joints,
        })
    }

    /// Image for one view of one frame: the stored file when an image
    /// directory is configured and holds it, otherwise an SVG with the
    /// annotated joints drawn as markers.
    pub fn image(&self, view_id: &str, capture_id: u64, frame_id: u64) -> Result<(Vec<u8>, &'static str), ServiceError> {
        let store = self.store.lock().unwrap();
        let records = store.frame_records((capture_id, frame_id));
        if records.is_empty() {
            return Err(ServiceError::UnknownFrame { capture_id, frame_id });
        }
        let rec = records
            .into_iter()
            .find(|r| r.camera_id == view_id)
            .ok_or_else(|| ServiceError::UnknownView(view_id.to_string()))?;
        if let Some(dir) = &self.image_dir {
            let path = dir.join(&rec.file_name);
            if let Ok(bytes) = fs::read(&path) {
                let mime = match path.extension().and_then(|e| e.to_str()) {
                    Some("png") => "image/png",
                    Some("jpg" | "jpeg") => "image/jpeg",
                    Some("svg") => "image/svg+xml",
                    _ => "application/octet-stream",
                };
                return Ok((bytes, mime));
            }
        }
        Ok((marker_svg(rec).into_bytes(), "image/svg+xml"))
    }

    fn render(&self, state: &SessionState) -> Result<SessionView, ServiceError> {
        let cams = self.cameras_for(state)?;
        Ok(SessionView {
            format_version: FORMAT_VERSION.into(),
            session_id: state.session_id.clone(),
            capture_id: state.capture_id,
            frame_id: state.frame_id,
            views: state.views.clone(),
            version: state.version,
            verified: state.verified,
            joints: (0..NUM_JOINTS).map(|j| joint_view(state, j, &cams)).collect(),
        })
    }
}

fn residual_threshold(cams: &[CameraView]) -> f64 {
    let width = cams.iter().map(|c| c.image_size()[0]).max().unwrap_or(REFERENCE_IMAGE_WIDTH as u32);
    RESIDUAL_FLAG_PX * width as f64 / REFERENCE_IMAGE_WIDTH
}

fn joint_view(state: &SessionState, joint_id: usize, cams: &[CameraView]) -> JointView {
    let clicks = state.clicks(joint_id);
    let threshold = residual_threshold(cams);
    let mut view = JointView {
        joint_id,
        name: schema()[joint_id].name.clone(),
        status: JointStatus::Unclicked,
        clicks: clicks.clone(),
        result: None,
        reprojections: None,
        residual_flag: false,
        residual_threshold_px: threshold,
        warning: None,
    };
    match clicks.len() {
        0 => {}
        1 => view.status = JointStatus::Underdetermined,
        _ => {
            let set = Detection2DSet::new(
                joint_id,
                clicks.iter().map(|c| Observation::new(c.view_id.clone(), c.u, c.v, 1.0)).collect(),
            );
            match triangulate_dlt(&set, cams, true) {
                Ok(r) => {
                    view.status = if state.verified { JointStatus::Verified } else { JointStatus::Triangulated };
                    view.residual_flag = r.max_inlier_residual() > threshold;
                    view.reprojections = Some(reproject_all(&r.point_world, cams));
                    view.result = Some(r);
                }
                Err(e) => {
                    view.status = JointStatus::Underdetermined;
                    view.warning = Some(e.to_string());
                }
            }
        }
    }
    view
}

/// `r` with new world joints; validity is recomputed for `r`'s camera.
fn committed_record(r: &AnnotationRecord, points: &[Option<Vector3<f64>>]) -> AnnotationRecord {
    let cam = &r.camera;
    let mut joints_world = vec![Vector3::zeros(); NUM_JOINTS];
    let mut joint_valid = vec![false; NUM_JOINTS];
    let mut joints_img = vec![Vector2::zeros(); NUM_JOINTS];
    for (j, p) in points.iter().enumerate() {
        let Some(p) = p else { continue };
        joints_world[j] = *p;
        if cam.to_camera(p).z <= MIN_DEPTH_MM {
            continue;
        }
        if let Ok(uv) = project(p, cam) {
            joints_img[j] = uv;
            joint_valid[j] = cam.contains_pixel(&uv);
        }
    }
    let hand_has = |hand: Hand| points[hand.offset()..hand.offset() + JOINTS_PER_HAND].iter().any(Option::is_some);
    let hand_type = match (hand_has(Hand::Right), hand_has(Hand::Left)) {
        (true, true) => HandType::Interacting,
        (false, true) => HandType::Left,
        _ => HandType::Right,
    };
    let wrists = joint_valid[Hand::Right.root_index()] && joint_valid[Hand::Left.root_index()];
    let visible: Vec<Vector2<f64>> = (0..NUM_JOINTS).filter(|&j| joint_valid[j]).map(|j| joints_img[j]).collect();
    let [w, h] = cam.image_size();
    let bbox = BBox::around(&visible, 0.15, 16.0).unwrap_or(BBox::new(0.0, 0.0, w as f64, h as f64));
    AnnotationRecord {
        bbox,
        hand_type,
        hand_type_valid: hand_type != HandType::Interacting || wrists,
        joints_world,
        joint_valid,
        joints_img: Some(joints_img),
        ..r.clone()
    }
}

const FINGER_COLOURS: [&str; 6] = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#ffffff"];

fn marker_svg(r: &AnnotationRecord) -> String {
    let [w, h] = r.camera.image_size();
    let radius = (w.max(h) as f64 / 200.0).max(2.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"-0.5 -0.5 {w} {h}\">\n<rect x=\"-0.5\" y=\"-0.5\" width=\"{w}\" height=\"{h}\" fill=\"#202020\"/>\n"
    );
    for j in 0..NUM_JOINTS {
        if !r.joint_valid[j] {
            continue;
        }
        let Ok(uv) = project(&r.joints_world[j], &r.camera) else { continue };
        let info = &schema()[j];
        let colour = info.finger.map_or(FINGER_COLOURS[5], |f| FINGER_COLOURS[f as usize]);
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{radius:.1}\" fill=\"{colour}\"><title>{}</title></circle>\n",
            uv.x, uv.y, info.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthrig::{generate_rig, synth_dataset, RigSpec};

    pub(crate) fn fixture(n_cams: usize) -> (tempfile::TempDir, AnnotationService, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let rig = generate_rig(&RigSpec { n_cameras: n_cams, ..RigSpec::default() }).unwrap();
        let ds = synth_dataset(&rig, 3, 7);
        let path = dir.path().join("data.json");
        dataset_io::write_dataset(&ds, &path).unwrap();
        let svc = AnnotationService::open(&path, &dir.path().join("state"), None).unwrap();
        (dir, svc, ds)
    }

    fn truth_click(ds: &Dataset, frame: u64, view: &str, joint: usize) -> ClickRequest {
        let r = ds.records.iter().find(|r| r.frame_id == frame && r.camera_id == view).unwrap();
        let uv = project(&r.joints_world[joint], &r.camera).unwrap();
        ClickRequest {
            joint_id: Some(joint),
            view_id: view.into(),
            u: uv.x,
            v: uv.y,
            timestamp: Some(1),
            ..Default::default()
        }
    }

    #[test]
    fn open_picks_six_views() {
        let (_d, svc, _) = fixture(20);
        let s = svc.open_session(&OpenRequest { capture_id: 0, frame_id: 2, views: None }).unwrap();
        assert_eq!(s.views.len(), 6);
        assert!(s.joints.iter().all(|j| j.status == JointStatus::Unclicked));
        assert!(matches!(
            svc.open_session(&OpenRequest { capture_id: 0, frame_id: 99, views: None }),
            Err(ServiceError::UnknownFrame { .. })
        ));
    }

    #[test]
    fn small_frames_use_every_view() {
        let (_d, svc, _) = fixture(3);
        let s = svc.open_session(&OpenRequest { capture_id: 0, frame_id: 0, views: None }).unwrap();
        assert_eq!(s.views.len(), 3);
    }

    #[test]
    fn view_selection_spreads_out() {
        let rig = generate_rig(&RigSpec { n_cameras: 40, ..RigSpec::default() }).unwrap();
        let picked = select_views(&rig, 6);
        let axes: Vec<_> = rig.iter().filter(|c| picked.contains(&c.view_id().to_string())).map(|c| c.optical_axis()).collect();
        for a in 0..axes.len() {
            for b in a + 1..axes.len() {
                assert!(axes[a].dot(&axes[b]).acos().to_degrees() > 40.0);
            }
        }
    }

    #[test]
    fn clicks_triangulate_and_reproject() {
        let (_d, svc, ds) = fixture(20);
        let s = svc.open_session(&OpenRequest { capture_id: 0, frame_id: 2, views: None }).unwrap();
        let v = &s.views;
        let joint = 5;
        let r1 = svc.submit_click(&s.session_id, &truth_click(&ds, 2, &v[0], joint)).unwrap();
        assert_eq!(r1.joint.status, JointStatus::Underdetermined);
        assert!(r1.joint.result.is_none());
        let r2 = svc.submit_click(&s.session_id, &truth_click(&ds, 2, &v[1], joint)).unwrap();
        assert_eq!(r2.joint.status, JointStatus::Triangulated);
        assert!(!r2.joint.residual_flag);
        let third = truth_click(&ds, 2, &v[2], joint);
        let rep = r2.joint.reprojections.unwrap().into_iter().find(|r| r.view_id == v[2]).unwrap().uv.unwrap();
        assert!((rep - Vector2::new(third.u, third.v)).norm() < 1e-3);

        let again = svc.submit_click(&s.session_id, &truth_click(&ds, 2, &v[1], joint)).unwrap();
        assert!(!again.applied);
        assert_eq!(again.version, r2.version);

        let mut moved = truth_click(&ds, 2, &v[1], joint);
        moved.u += 30.0;
        svc.submit_click(&s.session_id, &moved).unwrap();
        let undone = svc.undo(&s.session_id, &VersionRequest::default()).unwrap();
        assert_eq!(undone.joints[joint].clicks, r2.joint.clicks);
    }

    #[test]
    fn inconsistent_click_is_flagged() {
        let (_d, svc, ds) = fixture(20);
        let s = svc.open_session(&OpenRequest { capture_id: 0, frame_id: 2, views: None }).unwrap();
        svc.submit_click(&s.session_id, &truth_click(&ds, 2, &s.views[0], 3)).unwrap();
        let mut off = truth_click(&ds, 2, &s.views[3], 3);
        off.u += 50.0;
        let r = svc.submit_click(&s.session_id, &off).unwrap();
        assert_eq!(r.joint.status, JointStatus::Triangulated);
        assert!(r.joint.residual_flag, "{:?}", r.joint.result);
    }

    #[test]
    fn version_conflicts_and_unknowns() {
        let (_d, svc, ds) = fixture(10);
        let s = svc.open_session(&OpenRequest { capture_id: 0, frame_id: 0, views: None }).unwrap();
        let mut c = truth_click(&ds, 0, &s.views[0], 0);
        c.expected_version = Some(s.version + 5);
        assert!(matches!(svc.submit_click(&s.session_id, &c), Err(ServiceError::VersionConflict { .. })));
        c.expected_version = Some(s.version);
        svc.submit_click(&s.session_id, &c).unwrap();
        c.view_id = "nope".into();
        assert!(matches!(svc.submit_click(&s.session_id, &c), Err(ServiceError::UnknownView(_))));
        c.joint_id = Some(42);
        assert!(matches!(svc.submit_click(&s.session_id, &c), Err(ServiceError::UnknownJoint(_))));
    }

    #[test]
    fn commit_writes_valid_records() {
        let (dir, svc, ds) = fixture(12);
        let s = svc.open_session(&OpenRequest { capture_id: 0, frame_id: 2, views: None }).unwrap();
        assert!(matches!(svc.commit_frame(&s.session_id, &VersionRequest::default()), Err(ServiceError::NothingToCommit)));
        for joint in 0..10 {
            for view in &s.views[..2] {
                svc.submit_click(&s.session_id, &truth_click(&ds, 2, view, joint)).unwrap();
            }
        }
        let c = svc.commit_frame(&s.session_id, &VersionRequest::default()).unwrap();
        assert_eq!((c.valid_joints, c.invalid_joints), (10, 32));
        let path = dir.path().join("data.json");
        let first = fs::read(&path).unwrap();
        let report = dataset_io::validate_dataset(&path);
        assert!(report.is_clean(), "{}", report.to_text());
        svc.commit_frame(&s.session_id, &VersionRequest::default()).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
        let view = svc.get_session(&s.session_id).unwrap();
        assert!(view.verified);
        assert_eq!(view.joints[0].status, JointStatus::Verified);
    }

    #[test]
    fn journal_replay_survives_restart_and_torn_tail() {
        let (dir, svc, ds) = fixture(10);
        let s = svc.open_session(&OpenRequest { capture_id: 0, frame_id: 1, views: None }).unwrap();
        for k in 0..20 {
            let mut c = truth_click(&ds, 1, &s.views[k % 2], k);
            c.annotator_id = Some("a".into());
            svc.submit_click(&s.session_id, &c).unwrap();
        }
        svc.undo(&s.session_id, &VersionRequest::default()).unwrap();
        let before = svc.get_session(&s.session_id).unwrap();
        drop(svc);
        let journal = dir.path().join("state").join(&s.session_id).join("journal.jsonl");
        let mut f = OpenOptions::new().append(true).open(&journal).unwrap();
        f.write_all(b"{\"seq\": 99, \"event\": {\"type\": \"cli").unwrap();
        drop(f);
        let svc = AnnotationService::open(&dir.path().join("data.json"), &dir.path().join("state"), None).unwrap();
        assert_eq!(svc.get_session(&s.session_id).unwrap(), before);
        assert_eq!(before.joints[19].status, JointStatus::Unclicked);
        // appends continue cleanly after the truncated tail
        svc.submit_click(&s.session_id, &truth_click(&ds, 1, &s.views[0], 30)).unwrap();
        let svc2 = AnnotationService::open(&dir.path().join("data.json"), &dir.path().join("state"), None).unwrap();
        assert_eq!(svc2.get_session(&s.session_id).unwrap().version, before.version + 1);
    }

    #[test]
    fn synthetic_images_mark_joints() {
        let (_d, svc, ds) = fixture(5);
        let r = &ds.records[0];
        let (bytes, mime) = svc.image(&r.camera_id, r.capture_id, r.frame_id).unwrap();
        assert_eq!(mime, "image/svg+xml");
        let text = String::from_utf8(bytes).unwrap();
        let markers = text.matches("<circle").count();
        assert_eq!(markers, r.joint_valid.iter().filter(|v| **v).count());
    }
}
