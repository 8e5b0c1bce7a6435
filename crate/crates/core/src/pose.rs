//! The 42-keypoint hand schema, 2.5D ↔ 3D conversion and per-hand pose
//! utilities.
//!
//! Joint order within a hand is fingertip-to-root per finger (thumb, index,
//! middle, ring, pinky) followed by the wrist, e.g. `T4 T3 T2 T1 I4 ... P1
//! wrist`. The right hand occupies indices `0..21`, the left hand `21..42`.

use std::sync::LazyLock;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    back_project, invert_transform, CropTransform, GeometryError, IntrinsicsSource,
    PinholeIntrinsics,
};

pub const JOINTS_PER_HAND: usize = 21;
pub const NUM_JOINTS: usize = 2 * JOINTS_PER_HAND;
/// Index of the wrist (root) joint within one hand block.
pub const ROOT_JOINT: usize = 20;
/// Presence threshold on handedness probabilities (`h >= 0.5` is present).
pub const PRESENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("missing {0} root depth")]
    MissingDepth(&'static str),
    #[error("root joint is invalid")]
    InvalidRoot,
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),
    #[error("joint {0} is invalid")]
    InvalidJoint(usize),
    #[error("expected {expected} joints, got {got}")]
    WrongJointCount { expected: usize, got: usize },
    #[error("handedness probability {0} outside [0, 1]")]
    InvalidHandedness(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Right,
    Left,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Right, Hand::Left];

    /// First joint index of this hand's block in the 42-joint layout.
    pub fn offset(self) -> usize {
        match self {
            Hand::Right => 0,
            Hand::Left => JOINTS_PER_HAND,
        }
    }

    pub fn other(self) -> Hand {
        match self {
            Hand::Right => Hand::Left,
            Hand::Left => Hand::Right,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Hand::Right => "right",
            Hand::Left => "left",
        }
    }

    pub fn root_index(self) -> usize {
        self.offset() + ROOT_JOINT
    }
}

/// A value per hand.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HandPair<T> {
    pub right: T,
    pub left: T,
}

impl<T> HandPair<T> {
    pub fn new(right: T, left: T) -> Self {
        Self { right, left }
    }

    pub fn get(&self, hand: Hand) -> &T {
        match hand {
            Hand::Right => &self.right,
            Hand::Left => &self.left,
        }
    }

    pub fn get_mut(&mut self, hand: Hand) -> &mut T {
        match hand {
            Hand::Right => &mut self.right,
            Hand::Left => &mut self.left,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(Hand, T) -> U) -> HandPair<U> {
        HandPair {
            right: f(Hand::Right, self.right),
            left: f(Hand::Left, self.left),
        }
    }

    pub fn as_ref(&self) -> HandPair<&T> {
        HandPair {
            right: &self.right,
            left: &self.left,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; 5] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Pinky,
    ];

    pub fn letter(self) -> char {
        match self {
            Finger::Thumb => 'T',
            Finger::Index => 'I',
            Finger::Middle => 'M',
            Finger::Ring => 'R',
            Finger::Pinky => 'P',
        }
    }

    fn ordinal(self) -> usize {
        self as usize
    }

    /// In-hand index of `segment` (1 = root ... 4 = fingertip).
    pub fn joint(self, segment: u8) -> usize {
        debug_assert!((1..=4).contains(&segment));
        self.ordinal() * 4 + (4 - segment as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointInfo {
    pub index: usize,
    pub name: String,
    pub hand: Hand,
    pub finger: Option<Finger>,
    /// 1 = finger root ... 4 = fingertip; 0 for the wrist.
    pub segment: u8,
    pub parent: Option<usize>,
    pub flip_pair: usize,
}

static SCHEMA: LazyLock<Vec<JointInfo>> = LazyLock::new(|| {
    let mut out = Vec::with_capacity(NUM_JOINTS);
    for hand in Hand::BOTH {
        let prefix = match hand {
            Hand::Right => 'R',
            Hand::Left => 'L',
        };
        let off = hand.offset();
        for finger in Finger::ALL {
            for segment in (1..=4u8).rev() {
                let local = finger.joint(segment);
                let parent = if segment == 1 {
                    ROOT_JOINT
                } else {
                    finger.joint(segment - 1)
                };
                out.push(JointInfo {
                    index: off + local,
                    name: format!("{prefix}_{}{segment}", finger.letter()),
                    hand,
                    finger: Some(finger),
                    segment,
                    parent: Some(off + parent),
                    flip_pair: hand.other().offset() + local,
                });
            }
        }
        out.push(JointInfo {
            index: off + ROOT_JOINT,
            name: format!("{prefix}_wrist"),
            hand,
            finger: None,
            segment: 0,
            parent: None,
            flip_pair: hand.other().offset() + ROOT_JOINT,
        });
    }
    out
});

/// The 42-entry joint table.
pub fn schema() -> &'static [JointInfo] {
    &SCHEMA
}

pub fn joint_index(name: &str) -> Option<usize> {
    SCHEMA.iter().position(|j| j.name == name)
}

/// Column labels of the per-joint error table (`T4 ... P1`).
pub fn finger_joint_labels() -> Vec<String> {
    SCHEMA[..ROOT_JOINT]
        .iter()
        .map(|j| j.name[2..].to_string())
        .collect()
}

/// Machine-readable schema table, as checked into `docs/joint_schema.json`.
pub fn schema_document() -> serde_json::Value {
    serde_json::json!({
        "format_version": "1",
        "joints_per_hand": JOINTS_PER_HAND,
        "root_joint": ROOT_JOINT,
        "dof_vector_order": DOF_LABELS,
        "joints": SCHEMA.iter().map(|j| serde_json::json!({
            "index": j.index,
            "name": j.name,
            "hand": j.hand,
            "parent": j.parent,
            "flip_pair": j.flip_pair,
        })).collect::<Vec<_>>(),
    })
}

/// Per-hand 2.5D pose: `(x, y)` in crop pixels, `z` root-relative depth in mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose25D {
    pub hand: Hand,
    pub joints: Vec<Vector3<f64>>,
}

/// Per-hand 3D pose in camera space (mm) with a validity mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub joints: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl Pose3D {
    pub fn new(joints: Vec<Vector3<f64>>, valid: Vec<bool>) -> Result<Self, PoseError> {
        for len in [joints.len(), valid.len()] {
            if len != JOINTS_PER_HAND {
                return Err(PoseError::WrongJointCount {
                    expected: JOINTS_PER_HAND,
                    got: len,
                });
            }
        }
        Ok(Self { joints, valid })
    }

    pub fn all_valid(joints: Vec<Vector3<f64>>) -> Result<Self, PoseError> {
        let n = joints.len();
        Self::new(joints, vec![true; n])
    }

    pub fn root(&self) -> Option<Vector3<f64>> {
        self.valid[ROOT_JOINT].then(|| self.joints[ROOT_JOINT])
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Self {
            joints: self.joints.iter().map(|j| j + offset).collect(),
            valid: self.valid.clone(),
        }
    }

    pub fn transformed(&self, rot: &Matrix3<f64>, offset: &Vector3<f64>) -> Self {
        Self {
            joints: self.joints.iter().map(|j| rot * j + offset).collect(),
            valid: self.valid.clone(),
        }
    }
}

/// Probability that each hand is present. The two values are independent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Handedness {
    pub right: f64,
    pub left: f64,
}

impl Handedness {
    pub fn new(right: f64, left: f64) -> Result<Self, PoseError> {
        for p in [right, left] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PoseError::InvalidHandedness(p));
            }
        }
        Ok(Self { right, left })
    }

    pub fn get(&self, hand: Hand) -> f64 {
        match hand {
            Hand::Right => self.right,
            Hand::Left => self.left,
        }
    }

    pub fn present(&self, hand: Hand) -> bool {
        self.get(hand) >= PRESENCE_THRESHOLD
    }

    pub fn swapped(&self) -> Self {
        Self {
            right: self.left,
            left: self.right,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthProvenance {
    ExternalRootnet,
    NetworkRelative,
    GroundTruth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthValue {
    pub mm: f64,
    pub provenance: DepthProvenance,
}

impl DepthValue {
    pub fn new(mm: f64, provenance: DepthProvenance) -> Self {
        Self { mm, provenance }
    }
}

/// Absolute root depths of both hands and the right-to-left relative depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RootDepths {
    pub right: Option<DepthValue>,
    pub left: Option<DepthValue>,
    pub rel: Option<DepthValue>,
}

/// Absolute depth added to a hand's z column before back-projection.
///
/// The right hand always uses its own root depth. The left hand uses its own
/// root depth when the right hand is absent, and `z_R + z_rel` otherwise.
pub fn root_offset(hand: Hand, h: &Handedness, depths: &RootDepths) -> Result<f64, PoseError> {
    let need = |d: Option<DepthValue>, name| d.map(|d| d.mm).ok_or(PoseError::MissingDepth(name));
    match hand {
        Hand::Right => need(depths.right, "right"),
        Hand::Left if !h.present(Hand::Right) => need(depths.left, "left"),
        Hand::Left => Ok(need(depths.right, "right")? + need(depths.rel, "relative")?),
    }
}

/// Lift 2.5D poses to camera-space 3D. Hands with `h < 0.5` come back as
/// `None`.
pub fn assemble_3d(
    poses: HandPair<&Pose25D>,
    h: &Handedness,
    depths: &RootDepths,
    crop: &CropTransform,
    source: IntrinsicsSource<'_>,
) -> Result<HandPair<Option<Pose3D>>, PoseError> {
    let inverse = invert_transform(crop)?;
    let lift = |hand: Hand| -> Result<Option<Pose3D>, PoseError> {
        if !h.present(hand) {
            return Ok(None);
        }
        let z_root = root_offset(hand, h, depths)?;
        let pose = poses.get(hand);
        let full: Vec<Vector3<f64>> = pose
            .joints
            .iter()
            .map(|j| {
                let uv = inverse.apply_point(&Vector2::new(j.x, j.y));
                Vector3::new(uv.x, uv.y, j.z + z_root)
            })
            .collect();
        let joints = back_project(&full, source)?;
        Pose3D::all_valid(joints).map(Some)
    };
    Ok(HandPair::new(lift(Hand::Right)?, lift(Hand::Left)?))
}

/// Camera-space pose → 2.5D crop-space pose (the forward direction of
/// [`assemble_3d`]). Returns the pose and its absolute root depth.
pub fn to_pose25d(
    pose_cam: &Pose3D,
    hand: Hand,
    crop: &CropTransform,
    intrinsics: &PinholeIntrinsics,
) -> Result<(Pose25D, f64), PoseError> {
    let root = pose_cam.root().ok_or(PoseError::InvalidRoot)?;
    let joints = pose_cam
        .joints
        .iter()
        .map(|p| {
            if !(p.z > 0.0) {
                return Err(PoseError::Geometry(GeometryError::PointBehindCamera { depth: p.z }));
            }
            let uv = crop.apply_point(&intrinsics.project_camera_point(p));
            Ok(Vector3::new(uv.x, uv.y, p.z - root.z))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Pose25D { hand, joints }, root.z))
}

/// Both hands of one image: `(u, v, z)` per joint in the 42-joint layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandFrame {
    pub joints: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
    pub handedness: Handedness,
}

/// Horizontal image flip: `u -> width - 1 - u`, right and left blocks swapped,
/// handedness swapped.
pub fn flip_pose(frame: &HandFrame, image_width: u32) -> HandFrame {
    let w = image_width as f64;
    let mut joints = vec![Vector3::zeros(); frame.joints.len()];
    let mut valid = vec![false; frame.valid.len()];
    for info in schema() {
        let (src, dst) = (info.index, info.flip_pair);
        if src < frame.joints.len() && dst < joints.len() {
            let p = frame.joints[src];
            joints[dst] = Vector3::new(w - 1.0 - p.x, p.y, p.z);
            valid[dst] = frame.valid[src];
        }
    }
    HandFrame {
        joints,
        valid,
        handedness: frame.handedness.swapped(),
    }
}

/// Subtract the wrist position from every joint.
pub fn root_align(pose: &Pose3D) -> Result<Pose3D, PoseError> {
    let root = pose.root().ok_or(PoseError::InvalidRoot)?;
    Ok(pose.translated(&-root))
}

/// Order of [`compute_dof_vector`]'s output.
pub const DOF_LABELS: [&str; 20] = [
    "T1_pitch", "T1_yaw", "I1_pitch", "I1_yaw", "M1_pitch", "M1_yaw", "R1_pitch", "R1_yaw",
    "P1_pitch", "P1_yaw", "T2", "T3", "I2", "I3", "M2", "M3", "R2", "R3", "P2", "P3",
];

/// 20 joint angles (radians) describing one hand's articulation.
///
/// A total-least-squares plane is fitted to the wrist and the I1, M1, R1, P1
/// roots; its normal is oriented towards the palm (for the right hand along
/// `(I1 - wrist) x (P1 - wrist)`, mirrored for the left hand).
///
/// - Root pitch: elevation of the root→next segment out of the plane,
///   positive towards the palm, in `[-pi/2, pi/2]`.
/// - Root yaw: in-plane angle between the wrist→root direction and the
///   segment, positive towards the pinky side on either hand.
/// - T2 ... P3: bend angle between the incoming and outgoing bone, in
///   `[-pi, pi]`, positive for flexion towards the palm.
pub fn compute_dof_vector(pose: &Pose3D, hand: Hand) -> Result<[f64; 20], PoseError> {
    if let Some(i) = pose.valid.iter().position(|v| !v) {
        return Err(PoseError::InvalidJoint(i));
    }
    let j = &pose.joints;
    let wrist = j[ROOT_JOINT];
    let plane_pts = [
        wrist,
        j[Finger::Index.joint(1)],
        j[Finger::Middle.joint(1)],
        j[Finger::Ring.joint(1)],
        j[Finger::Pinky.joint(1)],
    ];
    let centroid = plane_pts.iter().sum::<Vector3<f64>>() / plane_pts.len() as f64;
    let scatter = plane_pts
        .iter()
        .map(|p| (p - centroid) * (p - centroid).transpose())
        .sum::<Matrix3<f64>>();
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l_max > 0.0) || l_mid <= 1e-12 * l_max {
        return Err(PoseError::DegeneratePose(
            "wrist and finger roots are collinear; palm plane undefined".into(),
        ));
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let chirality = match hand {
        Hand::Right => 1.0,
        Hand::Left => -1.0,
    };
    let palm_dir = (j[Finger::Index.joint(1)] - wrist).cross(&(j[Finger::Pinky.joint(1)] - wrist))
        * chirality;
    if normal.dot(&palm_dir) < 0.0 {
        normal = -normal;
    }
    let in_plane = |v: &Vector3<f64>| v - normal * v.dot(&normal);

    let mut out = [0.0; 20];
    for (k, finger) in Finger::ALL.iter().enumerate() {
        let root = j[finger.joint(1)];
        let next = j[finger.joint(2)];
        let seg = next - root;
        let seg_in = in_plane(&seg);
        out[2 * k] = seg.dot(&normal).atan2(seg_in.norm());
        let reference = in_plane(&(root - wrist));
        let yaw = reference.cross(&seg_in).dot(&normal).atan2(reference.dot(&seg_in));
        out[2 * k + 1] = -chirality * yaw;

        let bend_axis = reference.cross(&normal);
        for (s, segment) in [2u8, 3].into_iter().enumerate() {
            let prev = j[finger.joint(segment)] - j[finger.joint(segment - 1)];
            let nxt = j[finger.joint(segment + 1)] - j[finger.joint(segment)];
            let cross = prev.cross(&nxt);
            let magnitude = cross.norm().atan2(prev.dot(&nxt));
            let sign = if cross.dot(&bend_axis) < 0.0 { -1.0 } else { 1.0 };
            out[10 + 2 * k + s] = sign * magnitude;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_crop_transform, BBox, NormalizedIntrinsics};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Flat right hand: palm facing +z, fingers along +y, thumb towards +x.
    fn flat_hand() -> Pose3D {
        let mut joints = vec![Vector3::zeros(); JOINTS_PER_HAND];
        let dirs = [(-50f64, 40.0), (-12.0, 85.0), (0.0, 90.0), (12.0, 85.0), (24.0, 80.0)];
        for (finger, (angle, root_len)) in Finger::ALL.iter().zip(dirs) {
            let a = angle.to_radians();
            let d = Vector3::new(-a.sin(), a.cos(), 0.0);
            for seg in 1..=4u8 {
                joints[finger.joint(seg)] = d * (root_len + 30.0 * (seg as f64 - 1.0));
            }
        }
        Pose3D::all_valid(joints).unwrap()
    }

    #[test]
    fn schema_is_complete_involution() {
        let s = schema();
        assert_eq!(s.len(), NUM_JOINTS);
        for (i, j) in s.iter().enumerate() {
            assert_eq!(j.index, i);
            assert_eq!(s[j.flip_pair].flip_pair, i);
            assert_ne!(j.flip_pair, i);
            assert_eq!(j.flip_pair, (i + JOINTS_PER_HAND) % NUM_JOINTS);
        }
        let names: std::collections::HashSet<_> = s.iter().map(|j| j.name.clone()).collect();
        assert_eq!(names.len(), NUM_JOINTS);
        assert_eq!(s[0].name, "R_T4");
        assert_eq!(s[20].name, "R_wrist");
        assert_eq!(s[41].name, "L_wrist");
        assert_eq!(joint_index("L_I2"), Some(21 + 6));
        assert_eq!(finger_joint_labels()[19], "P1");
    }

    #[test]
    fn schema_document_matches_docs() {
        let on_disk: serde_json::Value = serde_json::from_str(include_str!(
            "../../../docs/joint_schema.json"
        ))
        .unwrap();
        assert_eq!(on_disk, schema_document());
    }

    #[test]
    fn left_depth_uses_relative_when_right_present() {
        let depths = RootDepths {
            right: Some(DepthValue::new(500.0, DepthProvenance::ExternalRootnet)),
            left: Some(DepthValue::new(600.0, DepthProvenance::ExternalRootnet)),
            rel: Some(DepthValue::new(30.0, DepthProvenance::NetworkRelative)),
        };
        let both = Handedness::new(0.9, 0.9).unwrap();
        assert_eq!(root_offset(Hand::Left, &both, &depths).unwrap(), 530.0);
        let left_only = Handedness::new(0.3, 0.9).unwrap();
        assert_eq!(root_offset(Hand::Left, &left_only, &depths).unwrap(), 600.0);
        let boundary = Handedness::new(0.5, 0.5).unwrap();
        assert_eq!(root_offset(Hand::Left, &boundary, &depths).unwrap(), 530.0);
    }

    fn crop_and_pose() -> (CropTransform, Pose25D) {
        let crop = make_crop_transform(&BBox::new(100.0, 50.0, 200.0, 200.0), [256, 256], None)
            .unwrap();
        let joints = (0..JOINTS_PER_HAND)
            .map(|i| {
                Vector3::new(10.0 * i as f64, 5.0 * i as f64, if i == ROOT_JOINT { 0.0 } else { i as f64 })
            })
            .collect();
        (crop, Pose25D { hand: Hand::Right, joints })
    }

    #[test]
    fn assemble_gating_cases() {
        let (crop, p) = crop_and_pose();
        let pl = Pose25D { hand: Hand::Left, ..p.clone() };
        let src = IntrinsicsSource::Normalized(NormalizedIntrinsics::new([512, 334]));
        let depths = RootDepths {
            right: Some(DepthValue::new(500.0, DepthProvenance::ExternalRootnet)),
            left: Some(DepthValue::new(600.0, DepthProvenance::ExternalRootnet)),
            rel: Some(DepthValue::new(30.0, DepthProvenance::NetworkRelative)),
        };
        let both = assemble_3d(HandPair::new(&p, &pl), &Handedness::new(0.9, 0.9).unwrap(), &depths, &crop, src).unwrap();
        assert_abs_diff_eq!(both.left.unwrap().joints[ROOT_JOINT].z, 530.0, epsilon = 1e-12);
        assert_abs_diff_eq!(both.right.unwrap().joints[ROOT_JOINT].z, 500.0, epsilon = 1e-12);

        let left = assemble_3d(HandPair::new(&p, &pl), &Handedness::new(0.3, 0.9).unwrap(), &depths, &crop, src).unwrap();
        assert!(left.right.is_none());
        assert_abs_diff_eq!(left.left.unwrap().joints[ROOT_JOINT].z, 600.0, epsilon = 1e-12);

        let none = assemble_3d(HandPair::new(&p, &pl), &Handedness::new(0.2, 0.2).unwrap(), &RootDepths::default(), &crop, src).unwrap();
        assert!(none.right.is_none() && none.left.is_none());

        let missing = assemble_3d(HandPair::new(&p, &pl), &Handedness::new(0.9, 0.1).unwrap(), &RootDepths::default(), &crop, src);
        assert_eq!(missing.unwrap_err(), PoseError::MissingDepth("right"));
    }

    #[test]
    fn presence_depends_only_on_threshold_crossing() {
        let (crop, p) = crop_and_pose();
        let src = IntrinsicsSource::Normalized(NormalizedIntrinsics::new([512, 334]));
        let depths = RootDepths {
            right: Some(DepthValue::new(500.0, DepthProvenance::GroundTruth)),
            left: Some(DepthValue::new(600.0, DepthProvenance::GroundTruth)),
            rel: Some(DepthValue::new(30.0, DepthProvenance::GroundTruth)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let hr: f64 = rng.random();
            let hl: f64 = rng.random();
            // monotone map fixing 0.5: x -> x^k with the 0.5 crossing preserved
            let squash = |x: f64| if x >= 0.5 { 0.5 + (x - 0.5) / 3.0 } else { x * x * 2.0 };
            let a = assemble_3d(HandPair::new(&p, &p), &Handedness::new(hr, hl).unwrap(), &depths, &crop, src).unwrap();
            let b = assemble_3d(HandPair::new(&p, &p), &Handedness::new(squash(hr), squash(hl)).unwrap(), &depths, &crop, src).unwrap();
            assert_eq!(a.right.is_some(), b.right.is_some());
            assert_eq!(a.left.is_some(), b.left.is_some());
        }
    }

    #[test]
    fn project_then_assemble_is_identity() {
        let cam_pose = flat_hand().translated(&Vector3::new(30.0, -20.0, 700.0));
        let k = NormalizedIntrinsics::new([512, 334]);
        let crop = make_crop_transform(&BBox::new(50.0, 20.0, 300.0, 280.0), [256, 256], None).unwrap();
        let (p25, z_root) = to_pose25d(&cam_pose, Hand::Right, &crop, &k.intrinsics()).unwrap();
        assert_eq!(p25.joints[ROOT_JOINT].z, 0.0);
        let depths = RootDepths {
            right: Some(DepthValue::new(z_root, DepthProvenance::GroundTruth)),
            ..Default::default()
        };
        let out = assemble_3d(HandPair::new(&p25, &p25), &Handedness::new(1.0, 0.0).unwrap(), &depths, &crop, IntrinsicsSource::Normalized(k)).unwrap();
        for (a, b) in out.right.unwrap().joints.iter().zip(&cam_pose.joints) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn flip_examples() {
        let mut joints = vec![Vector3::zeros(); NUM_JOINTS];
        let mut valid = vec![false; NUM_JOINTS];
        for i in 0..JOINTS_PER_HAND {
            joints[i] = Vector3::new(10.0 + i as f64, 20.0, 3.0);
            valid[i] = true;
        }
        let frame = HandFrame { joints, valid, handedness: Handedness::new(0.9, 0.1).unwrap() };
        let flipped = flip_pose(&frame, 512);
        assert!(flipped.valid[21..].iter().all(|v| *v));
        assert!(flipped.valid[..21].iter().all(|v| !*v));
        assert_eq!(flipped.joints[21], Vector3::new(501.0, 20.0, 3.0));
        assert_eq!(flipped.handedness, Handedness::new(0.1, 0.9).unwrap());
        assert_eq!(flip_pose(&flipped, 512), frame);

        let mut centre = frame.clone();
        centre.joints[0].x = 255.5;
        assert_eq!(flip_pose(&centre, 512).joints[21].x, 255.5);
    }

    #[test]
    fn root_align_examples() {
        let pose = flat_hand().translated(&Vector3::new(5.0, 6.0, 7.0));
        let aligned = root_align(&pose).unwrap();
        assert_eq!(aligned.joints[ROOT_JOINT], Vector3::zeros());
        let shifted = root_align(&pose.translated(&Vector3::new(-40.0, 2.0, 9.0))).unwrap();
        for (a, b) in aligned.joints.iter().zip(&shifted.joints) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let mut bad = pose.clone();
        bad.valid[ROOT_JOINT] = false;
        assert_eq!(root_align(&bad).unwrap_err(), PoseError::InvalidRoot);
    }

    #[test]
    fn flat_hand_has_zero_angles() {
        let dof = compute_dof_vector(&flat_hand(), Hand::Right).unwrap();
        for v in dof {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn bent_index_reports_right_angle() {
        let mut pose = flat_hand();
        let i2 = pose.joints[Finger::Index.joint(2)];
        // flex towards the palm (+z)
        pose.joints[Finger::Index.joint(3)] = i2 + Vector3::z() * 30.0;
        pose.joints[Finger::Index.joint(4)] = i2 + Vector3::z() * 60.0;
        let dof = compute_dof_vector(&pose, Hand::Right).unwrap();
        let i2_idx = DOF_LABELS.iter().position(|l| *l == "I2").unwrap();
        for (k, v) in dof.iter().enumerate() {
            if k == i2_idx {
                assert_abs_diff_eq!(*v, std::f64::consts::FRAC_PI_2, epsilon = 1e-6);
            } else if k >= 10 {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn collinear_roots_are_degenerate() {
        let mut pose = flat_hand();
        for (k, f) in [Finger::Index, Finger::Middle, Finger::Ring, Finger::Pinky].iter().enumerate() {
            for seg in 1..=4u8 {
                pose.joints[f.joint(seg)] = Vector3::new(0.0, 80.0 + 10.0 * k as f64 + seg as f64, 0.0);
            }
        }
        assert!(matches!(
            compute_dof_vector(&pose, Hand::Right),
            Err(PoseError::DegeneratePose(_))
        ));
    }

    #[test]
    fn dof_vector_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut pose = flat_hand();
        for j in pose.joints.iter_mut() {
            *j += Vector3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
        }
        let base = compute_dof_vector(&pose, Hand::Right).unwrap();
        for _ in 0..100 {
            let rot = Rotation3::from_scaled_axis(Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ));
            let t = Vector3::new(rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
            let moved = compute_dof_vector(&pose.transformed(rot.matrix(), &t), Hand::Right).unwrap();
            for (a, b) in base.iter().zip(moved) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn mirrored_hand_has_same_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pose = flat_hand();
        for j in pose.joints.iter_mut() {
            *j += Vector3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
        }
        let mirror = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        let left = pose.transformed(&mirror, &Vector3::zeros());
        let a = compute_dof_vector(&pose, Hand::Right).unwrap();
        let b = compute_dof_vector(&left, Hand::Left).unwrap();
        for (x, y) in a.iter().zip(b) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-9);
        }
    }
}
