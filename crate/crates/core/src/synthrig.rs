//! Synthetic capture studio: camera rigs, hand skeletons, noisy detections
//! and the view-count sweep.
//!
//! Every function is a pure function of its seed. Random streams are keyed
//! by what they describe (joint, view, trial), never by scheduling order.

use nalgebra::{UnitQuaternion, Vector2, Vector3, Vector4};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{AnnotationRecord, Dataset, HandType, PredictionRecord};
use crate::geometry::{look_at, project, BBox, CameraView, MIN_DEPTH_MM};
use crate::numeric::{mix_seed, CompensatedSum};
use crate::pose::{Finger, Hand, JOINTS_PER_HAND, NUM_JOINTS, ROOT_JOINT};
use crate::triangulation::{triangulate_ransac, Detection2DSet, Observation, RansacConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("rig has {available} cameras but {requested} views were requested")]
    InsufficientRig { requested: usize, available: usize },
    #[error("no skeletons to evaluate")]
    NoSkeletons,
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub n_cameras: usize,
    pub radius_mm: f64,
    pub target: [f64; 3],
    /// Standard deviation of the per-axis camera placement noise.
    pub jitter_mm: f64,
    pub image_size: [u32; 2],
    pub focal: f64,
    pub seed: u64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            n_cameras: 90,
            radius_mm: 1000.0,
            target: [0.0; 3],
            jitter_mm: 20.0,
            image_size: [4096, 2668],
            focal: 2000.0,
            seed: 0,
        }
    }
}

impl RigSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_cameras < 2 {
            return Err(SynthError::InvalidRig(format!("n_cameras must be >= 2, got {}", self.n_cameras)));
        }
        if !(self.radius_mm > 0.0) {
            return Err(SynthError::InvalidRig(format!("radius_mm must be > 0, got {}", self.radius_mm)));
        }
        if !(self.jitter_mm >= 0.0 && self.jitter_mm < self.radius_mm / 2.0) {
            return Err(SynthError::InvalidRig(format!("jitter_mm {} out of range", self.jitter_mm)));
        }
        if !(self.focal > 0.0) || self.image_size.contains(&0) {
            return Err(SynthError::InvalidRig("focal and image size must be positive".into()));
        }
        Ok(())
    }
}

/// Cameras on a Fibonacci sphere around `target`, each jittered and aimed
/// at the target with image "down" towards world -z. Ids are `cam000`, ...
pub fn generate_rig(spec: &RigSpec) -> Result<Vec<CameraView>, SynthError> {
    spec.validate()?;
    let target = Vector3::from(spec.target);
    let n = spec.n_cameras as f64;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let [w, h] = spec.image_size;
    let princpt = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    (0..spec.n_cameras)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let dir = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            let mut rng = rng_for(spec.seed ^ ((i as u64) << 40));
            let jitter = Vector3::from_fn(|_, _| normal(&mut rng) * spec.jitter_mm);
            let campos = target + dir * spec.radius_mm + jitter;
            let rot = look_at(&campos, &target, &-Vector3::z());
            CameraView::new(format!("cam{i:03}"), campos, rot, [spec.focal; 2], princpt, spec.image_size)
                .map_err(|e| SynthError::InvalidRig(e.to_string()))
        })
        .collect()
}

/// Named cameras for reduced-view experiments: the cameras whose viewing
/// direction towards `target` best matches looking down from +z (top),
/// along +y from the -y side (frontal), from +x (right) and from -x (left).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalViews {
    pub top: String,
    pub frontal: String,
    pub right: String,
    pub left: String,
}

pub fn canonical_views(cams: &[CameraView], target: &Vector3<f64>) -> Option<CanonicalViews> {
    let nearest = |side: Vector3<f64>| {
        cams.iter()
            .max_by(|a, b| {
                let da = (a.campos() - target).normalize().dot(&side);
                let db = (b.campos() - target).normalize().dot(&side);
                da.total_cmp(&db)
            })
            .map(|c| c.view_id().to_string())
    };
    Some(CanonicalViews {
        top: nearest(Vector3::z())?,
        frontal: nearest(-Vector3::y())?,
        right: nearest(Vector3::x())?,
        left: nearest(-Vector3::x())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSelection {
    Right,
    Left,
    Both,
}

impl HandSelection {
    pub fn hand_type(self) -> HandType {
        match self {
            HandSelection::Right => HandType::Right,
            HandSelection::Left => HandType::Left,
            HandSelection::Both => HandType::Interacting,
        }
    }

    fn includes(self, hand: Hand) -> bool {
        matches!((self, hand), (HandSelection::Both, _) | (HandSelection::Right, Hand::Right) | (HandSelection::Left, Hand::Left))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Articulation {
    /// Flat hand, straight fingers.
    Neutral,
    Random,
}

/// Canonical bone lengths (mm) per finger, root first: wrist→MCP (CMC for
/// the thumb), then the three phalanges.
pub const BONE_LENGTHS_MM: [[f64; 4]; 5] = [
    [45.0, 35.0, 30.0, 25.0], // thumb
    [85.0, 40.0, 25.0, 20.0], // index
    [87.0, 45.0, 30.0, 22.0], // middle: 184 mm wrist to tip
    [82.0, 42.0, 28.0, 21.0], // ring
    [78.0, 35.0, 24.0, 20.0], // pinky
];

/// In-palm direction of each finger, degrees from the middle finger axis,
/// positive towards the pinky.
pub const FINGER_SPREAD_DEG: [f64; 5] = [-50.0, -12.0, 0.0, 12.0, 24.0];

/// Per-subject uniform bone scale range.
pub const BONE_SCALE_RANGE: (f64, f64) = (0.9, 1.1);

/// World-space skeleton in schema order with validity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticHands {
    pub selection: HandSelection,
    pub joints: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl SyntheticHands {
    pub fn wrist(&self, hand: Hand) -> Option<Vector3<f64>> {
        let i = hand.root_index();
        self.valid[i].then(|| self.joints[i])
    }
}

/// One hand in its local frame: wrist at the origin, palm normal +z,
/// middle finger along +y, thumb on the +x side (right hand).
fn local_hand<R: Rng + ?Sized>(rng: &mut R, articulation: Articulation, scale: f64) -> Vec<Vector3<f64>> {
    let mut joints = vec![Vector3::zeros(); JOINTS_PER_HAND];
    let n = Vector3::z();
    for (k, finger) in Finger::ALL.iter().enumerate() {
        let bones = BONE_LENGTHS_MM[k].map(|b| b * scale);
        let spread = FINGER_SPREAD_DEG[k].to_radians();
        let radial = Vector3::new(-spread.sin(), spread.cos(), 0.0);
        let (yaw, pitch, bend) = match articulation {
            Articulation::Neutral => (0.0, 0.0, [0.0, 0.0]),
            Articulation::Random => {
                let max_bend = if k == 0 { 40f64 } else { 80.0 };
                (
                    rng.random_range(-10f64..10.0).to_radians(),
                    rng.random_range(-10f64..60.0).to_radians(),
                    [
                        rng.random_range(0.0..max_bend).to_radians(),
                        rng.random_range(0.0..max_bend).to_radians(),
                    ],
                )
            }
        };
        let root = radial * bones[0];
        joints[finger.joint(1)] = root;
        let d = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(n), yaw) * radial;
        let mut angle = pitch;
        let mut p = root;
        for seg in 2..=4u8 {
            p += (d * angle.cos() + n * angle.sin()) * bones[seg as usize - 1];
            joints[finger.joint(seg)] = p;
            if seg < 4 {
                angle += bend[seg as usize - 2];
            }
        }
    }
    joints
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let q = Vector4::from_fn(|_, _| normal(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q))
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::from_fn(|_, _| normal(rng)).normalize()
}

/// Skeleton placed near the world origin. For two hands the wrists are
/// 80–250 mm apart. Joints of an absent hand are zeros and invalid.
pub fn generate_hand(seed: u64, selection: HandSelection, articulation: Articulation) -> SyntheticHands {
    let mut rng = rng_for(seed);
    let scale = rng.random_range(BONE_SCALE_RANGE.0..BONE_SCALE_RANGE.1);
    let gap = rng.random_range(80.0..250.0);
    let gap_dir = random_unit(&mut rng);
    let centre = Vector3::from_fn(|_, _| rng.random_range(-40.0..40.0));
    let mut joints = vec![Vector3::zeros(); NUM_JOINTS];
    let mut valid = vec![false; NUM_JOINTS];
    for hand in Hand::BOTH {
        // consume the same draws whether or not the hand is kept
        let local = local_hand(&mut rng, articulation, scale);
        let rot = random_rotation(&mut rng);
        if !selection.includes(hand) {
            continue;
        }
        let wrist = match (selection, hand) {
            (HandSelection::Both, Hand::Right) => centre - gap_dir * (gap / 2.0),
            (HandSelection::Both, Hand::Left) => centre + gap_dir * (gap / 2.0),
            _ => centre,
        };
        let mirror = if hand == Hand::Left { -1.0 } else { 1.0 };
        for (j, p) in local.iter().enumerate() {
            let p = Vector3::new(mirror * p.x, p.y, p.z);
            joints[hand.offset() + j] = wrist + rot * p;
            valid[hand.offset() + j] = true;
        }
    }
    SyntheticHands { selection, joints, valid }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub pixel_sigma: f64,
    pub dropout_rate: f64,
    pub outlier_rate: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn exact() -> Self {
        Self::gaussian(0.0, 0)
    }

    pub fn gaussian(pixel_sigma: f64, seed: u64) -> Self {
        Self {
            pixel_sigma,
            dropout_rate: 0.0,
            outlier_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.pixel_sigma >= 0.0 && self.pixel_sigma.is_finite()) {
            return Err(SynthError::InvalidNoise(format!("pixel_sigma {} must be >= 0", self.pixel_sigma)));
        }
        for (name, rate) in [("dropout_rate", self.dropout_rate), ("outlier_rate", self.outlier_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(SynthError::InvalidNoise(format!("{name} {rate} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Planted outliers land at least this far from the true projection, so
/// every one of them is genuinely wrong.
pub const OUTLIER_MIN_OFFSET_PX: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDetections {
    /// One set per schema joint, in joint order.
    pub sets: Vec<Detection2DSet>,
    /// Per joint, the views that received an outlier.
    pub outlier_views: Vec<Vec<String>>,
}

/// Project every valid joint into every camera and corrupt the result.
///
/// Per (joint, view): drop with `dropout_rate`; otherwise replace by a
/// uniform in-image pixel with `outlier_rate` (confidence uniform in
/// [0, 1]); otherwise add isotropic Gaussian noise (confidence 1).
/// Joints behind a camera or projecting outside its image are not observed.
pub fn simulate_detections(
    skeleton: &SyntheticHands,
    cams: &[CameraView],
    noise: &NoiseModel,
) -> Result<SimulatedDetections, SynthError> {
    noise.validate()?;
    let mut sets = Vec::with_capacity(NUM_JOINTS);
    let mut outlier_views = Vec::with_capacity(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        let mut obs = Vec::new();
        let mut outliers = Vec::new();
        if skeleton.valid[j] {
            for (v, cam) in cams.iter().enumerate() {
                let mut rng = rng_for(noise.seed ^ ((j as u64) << 48) ^ ((v as u64) << 24));
                let drop = rng.random::<f64>() < noise.dropout_rate;
                let outlier = rng.random::<f64>() < noise.outlier_rate;
                let jitter = Vector2::new(normal(&mut rng), normal(&mut rng)) * noise.pixel_sigma;
                let p = &skeleton.joints[j];
                if cam.to_camera(p).z <= MIN_DEPTH_MM || drop {
                    continue;
                }
                let Ok(uv) = project(p, cam) else { continue };
                if !cam.contains_pixel(&uv) {
                    continue;
                }
                let id = cam.view_id();
                if outlier {
                    let [w, h] = cam.image_size();
                    let fake = loop {
                        let q = Vector2::new(
                            rng.random_range(-0.5..w as f64 - 0.5),
                            rng.random_range(-0.5..h as f64 - 0.5),
                        );
                        if (q - uv).norm() >= OUTLIER_MIN_OFFSET_PX {
                            break q;
                        }
                    };
                    obs.push(Observation::new(id, fake.x, fake.y, rng.random::<f64>()));
                    outliers.push(id.to_string());
                } else {
                    let uv = uv + jitter;
                    obs.push(Observation::new(id, uv.x, uv.y, 1.0));
                }
            }
        }
        sets.push(Detection2DSet::new(j, obs));
        outlier_views.push(outliers);
    }
    Ok(SimulatedDetections { sets, outlier_views })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub views: usize,
    pub mean_mm: f64,
    /// Sample standard deviation over trials; 0 when there is one trial.
    pub std_mm: f64,
    pub trials: usize,
    /// Joint triangulations that failed (too few or degenerate views).
    pub failed_joints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub format_version: String,
    pub pixel_sigma: f64,
    pub trials: usize,
    pub rows: Vec<SweepRow>,
    /// Set when the standard deviation is not meaningful.
    pub warning: Option<String>,
}

impl SweepResult {
    pub fn to_text(&self) -> String {
        let mut out = format!("pixel sigma {:.3} px, {} trials per row\n", self.pixel_sigma, self.trials);
        out.push_str(&format!("{:>6} {:>12} {:>12} {:>8}\n", "views", "mean_mm", "std_mm", "failed"));
        for r in &self.rows {
            out.push_str(&format!("{:>6} {:>12.4} {:>12.4} {:>8}\n", r.views, r.mean_mm, r.std_mm, r.failed_joints));
        }
        if let Some(w) = &self.warning {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

fn trial_seed(seed: u64, trial: usize, views: usize) -> u64 {
    mix_seed(seed ^ trial as u64 ^ ((views as u64) << 32))
}

/// Mean 3D error of one trial and the number of failed joints.
fn run_trial(
    skeleton: &SyntheticHands,
    cams: &[CameraView],
    noise: &NoiseModel,
    cfg: &RansacConfig,
) -> Result<(Option<f64>, usize), SynthError> {
    let det = simulate_detections(skeleton, cams, noise)?;
    let mut err = CompensatedSum::new();
    let (mut ok, mut failed) = (0usize, 0usize);
    for set in &det.sets {
        if !skeleton.valid[set.joint_id] {
            continue;
        }
        let cfg = cfg.clone().with_seed(noise.seed ^ set.joint_id as u64);
        match triangulate_ransac(set, cams, &cfg) {
            Ok(r) => {
                err.add((r.point_world - skeleton.joints[set.joint_id]).norm());
                ok += 1;
            }
            Err(_) => failed += 1,
        }
    }
    Ok(((ok > 0).then(|| err.value() / ok as f64), failed))
}

/// For each view count, draw `trials` random view subsets, triangulate
/// every joint and average the 3D error. Trials run in parallel; each owns
/// its seed, so results do not depend on scheduling.
pub fn run_view_sweep(
    skeletons: &[SyntheticHands],
    rig: &[CameraView],
    noise: &NoiseModel,
    view_counts: &[usize],
    trials: usize,
    cfg: &RansacConfig,
) -> Result<SweepResult, SynthError> {
    noise.validate()?;
    if skeletons.is_empty() {
        return Err(SynthError::NoSkeletons);
    }
    let trials = trials.max(1);
    let mut counts = view_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    if let Some(&max) = counts.last() {
        if max > rig.len() {
            return Err(SynthError::InsufficientRig { requested: max, available: rig.len() });
        }
    }
    let rows = counts
        .iter()
        .map(|&v| {
            let per_trial: Vec<(Option<f64>, usize)> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let seed = trial_seed(noise.seed, t, v);
                    let mut rng = rng_for(seed);
                    let mut picked = index::sample(&mut rng, rig.len(), v).into_vec();
                    picked.sort_unstable();
                    let cams: Vec<CameraView> = picked.iter().map(|&i| rig[i].clone()).collect();
                    let trial_noise = NoiseModel { seed, ..noise.clone() };
                    run_trial(&skeletons[t % skeletons.len()], &cams, &trial_noise, cfg)
                })
                .collect::<Result<_, _>>()?;
            let errors: Vec<f64> = per_trial.iter().filter_map(|t| t.0).collect();
            let failed = per_trial.iter().map(|t| t.1).sum();
            let n = errors.len();
            let mean = if n > 0 { crate::numeric::sum(errors.iter().copied()) / n as f64 } else { f64::NAN };
            let std = if n >= 2 {
                (crate::numeric::sum(errors.iter().map(|e| (e - mean).powi(2))) / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            Ok(SweepRow { views: v, mean_mm: mean, std_mm: std, trials: n, failed_joints: failed })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(SweepResult {
        format_version: crate::FORMAT_VERSION.to_string(),
        pixel_sigma: noise.pixel_sigma,
        trials,
        rows,
        warning: (trials < 2).then(|| "a single trial per row; std is reported as 0".to_string()),
    })
}

/// Pixel noise that puts the all-camera triangulation error near
/// `target_mm`, found by measuring the error at unit noise and scaling
/// (the error is linear in sigma for small noise).
pub fn calibrate_pixel_sigma(
    skeletons: &[SyntheticHands],
    rig: &[CameraView],
    target_mm: f64,
    seed: u64,
) -> Result<f64, SynthError> {
    let cfg = RansacConfig {
        inlier_threshold_px: 1e6,
        ..RansacConfig::default()
    };
    let probe = run_view_sweep(skeletons, rig, &NoiseModel::gaussian(1.0, seed), &[rig.len()], 8, &cfg)?;
    Ok(target_mm / probe.rows[0].mean_mm)
}

/// 90-view error the default noise level is calibrated to.
pub const CALIBRATION_TARGET_MM: f64 = 2.78;
/// View counts of the default sweep.
pub const DEFAULT_SWEEP_VIEWS: [usize; 6] = [2, 5, 10, 20, 40, 90];

/// RANSAC inlier threshold for Gaussian pixel noise: four sigmas, and never
/// below the 10 px default.
pub fn sweep_threshold_px(pixel_sigma: f64) -> f64 {
    (4.0 * pixel_sigma).max(RansacConfig::default().inlier_threshold_px)
}

/// Everything needed to run a sweep from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub rig: RigSpec,
    /// `None` calibrates so the all-camera error is near
    /// [`CALIBRATION_TARGET_MM`].
    pub pixel_sigma: Option<f64>,
    pub views: Vec<usize>,
    pub trials: usize,
    pub skeletons: usize,
    pub seed: u64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            rig: RigSpec::default(),
            pixel_sigma: None,
            views: DEFAULT_SWEEP_VIEWS.to_vec(),
            trials: 100,
            skeletons: 4,
            seed: 0,
        }
    }
}

pub fn run_sweep_plan(plan: &SweepPlan) -> Result<SweepResult, SynthError> {
    let rig = generate_rig(&RigSpec { seed: plan.seed, ..plan.rig.clone() })?;
    let skeletons: Vec<SyntheticHands> = (0..plan.skeletons.max(1))
        .map(|k| generate_hand(mix_seed(plan.seed ^ 0x5eed ^ k as u64), HandSelection::Both, Articulation::Random))
        .collect();
    let sigma = match plan.pixel_sigma {
        Some(s) => s,
        None => calibrate_pixel_sigma(&skeletons, &rig, CALIBRATION_TARGET_MM, plan.seed)?,
    };
    let cfg = RansacConfig {
        inlier_threshold_px: sweep_threshold_px(sigma),
        ..RansacConfig::default()
    };
    run_view_sweep(&skeletons, &rig, &NoiseModel::gaussian(sigma, plan.seed), &plan.views, plan.trials, &cfg)
}

/// Frame hand selections cycle right, left, both.
fn frame_selection(frame: usize) -> HandSelection {
    [HandSelection::Right, HandSelection::Left, HandSelection::Both][frame % 3]
}

/// A consistent dataset: one record per (frame, camera) that sees at least
/// one joint. Per-camera validity marks joints behind the camera or outside
/// its image as invalid.
pub fn synth_dataset(rig: &[CameraView], frames: usize, seed: u64) -> Dataset {
    let mut records = Vec::new();
    for f in 0..frames {
        let hands = generate_hand(mix_seed(seed ^ f as u64), frame_selection(f), Articulation::Random);
        records.extend(rig.iter().filter_map(|cam| record_for(&hands, cam, 0, f as u64, 0)));
    }
    Dataset { split: None, records }
}

/// Annotation record of `hands` as seen by `cam`, or `None` if no valid
/// joint is visible.
pub fn record_for(
    hands: &SyntheticHands,
    cam: &CameraView,
    capture_id: u64,
    frame_id: u64,
    subject_id: u64,
) -> Option<AnnotationRecord> {
    let mut joint_valid = vec![false; NUM_JOINTS];
    let mut joints_img = vec![Vector2::zeros(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        if !hands.valid[j] || cam.to_camera(&hands.joints[j]).z <= MIN_DEPTH_MM {
            continue;
        }
        if let Ok(uv) = project(&hands.joints[j], cam) {
            joints_img[j] = uv;
            joint_valid[j] = cam.contains_pixel(&uv);
        }
    }
    let visible: Vec<Vector2<f64>> = (0..NUM_JOINTS).filter(|&j| joint_valid[j]).map(|j| joints_img[j]).collect();
    let bbox = BBox::around(&visible, 0.15, 16.0)?;
    let hand_type = hands.selection.hand_type();
    let wrists_ok = joint_valid[ROOT_JOINT] && joint_valid[JOINTS_PER_HAND + ROOT_JOINT];
    Some(AnnotationRecord {
        capture_id,
        frame_id,
        camera_id: cam.view_id().to_string(),
        camera_type: "synthetic".into(),
        subject_id,
        file_name: format!("Capture{capture_id}/{}/image{frame_id:05}.svg", cam.view_id()),
        bbox,
        hand_type,
        hand_type_valid: hand_type != HandType::Interacting || wrists_ok,
        joints_world: hands.joints.clone(),
        joint_valid,
        joints_img: Some(joints_img),
        camera: cam.clone(),
    })
}

/// Predictions made by a fake model: ground truth in camera space plus
/// Gaussian joint noise, handedness pushed towards the truth.
pub fn synth_predictions(ds: &Dataset, joint_sigma_mm: f64, seed: u64) -> Vec<PredictionRecord> {
    ds.records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = rng_for(seed ^ ((i as u64) << 20));
            let mut p = PredictionRecord::from_truth(r);
            for j in p.joints_cam.iter_mut().flatten() {
                for c in j.iter_mut() {
                    *c += normal(&mut rng) * joint_sigma_mm;
                }
            }
            let mut fuzz = |target: f64| (target + (rng.random::<f64>() - 0.5) * 0.8).clamp(0.0, 1.0);
            p.h_r = fuzz(p.h_r);
            p.h_l = fuzz(p.h_l);
            if let Some(z) = p.z_rel.as_mut() {
                *z += normal(&mut rng) * joint_sigma_mm;
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::validate_records;
    use crate::pose::{compute_dof_vector, Pose3D};
    use approx::assert_abs_diff_eq;

    fn small_rig(n: usize) -> Vec<CameraView> {
        generate_rig(&RigSpec { n_cameras: n, ..RigSpec::default() }).unwrap()
    }

    #[test]
    fn two_camera_rig_sees_target_at_principal_point() {
        let rig = generate_rig(&RigSpec { n_cameras: 2, jitter_mm: 0.0, ..RigSpec::default() }).unwrap();
        assert_eq!(rig.len(), 2);
        for cam in &rig {
            let uv = project(&Vector3::zeros(), cam).unwrap();
            let pp = cam.princpt();
            assert_abs_diff_eq!(uv.x, pp[0], epsilon = 1e-9);
            assert_abs_diff_eq!(uv.y, pp[1], epsilon = 1e-9);
        }
        // opposite hemispheres
        assert!(rig[0].campos().z > 0.0 && rig[1].campos().z < 0.0);
    }

    #[test]
    fn rig_is_deterministic_and_valid() {
        let a = small_rig(90);
        assert_eq!(a.len(), 90);
        assert_eq!(a, small_rig(90));
        let other = generate_rig(&RigSpec { seed: 1, ..RigSpec::default() }).unwrap();
        assert_ne!(a, other);
        assert!(generate_rig(&RigSpec { n_cameras: 1, ..RigSpec::default() }).is_err());
        let c = canonical_views(&a, &Vector3::zeros()).unwrap();
        assert!(a.iter().find(|cam| cam.view_id() == c.top).unwrap().campos().z > 800.0);
    }

    #[test]
    fn neutral_hands_are_flat() {
        let h = generate_hand(3, HandSelection::Both, Articulation::Neutral);
        for hand in Hand::BOTH {
            let r = hand.offset()..hand.offset() + JOINTS_PER_HAND;
            let pose = Pose3D::all_valid(h.joints[r].to_vec()).unwrap();
            for v in compute_dof_vector(&pose, hand).unwrap() {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn hands_have_plausible_size() {
        for seed in 0..50 {
            let h = generate_hand(seed, HandSelection::Both, Articulation::Random);
            assert!(h.valid.iter().all(|v| *v));
            let gap = (h.wrist(Hand::Right).unwrap() - h.wrist(Hand::Left).unwrap()).norm();
            assert!((50.0..=400.0).contains(&gap), "{gap}");
            let flat = generate_hand(seed, HandSelection::Right, Articulation::Neutral);
            let tip = Finger::Middle.joint(4);
            let len = (flat.joints[tip] - flat.joints[ROOT_JOINT]).norm();
            assert!((150.0..=210.0).contains(&len), "{len}");
            assert_eq!(h, generate_hand(seed, HandSelection::Both, Articulation::Random));
        }
        let right = generate_hand(9, HandSelection::Right, Articulation::Random);
        assert!(right.valid[..21].iter().all(|v| *v) && right.valid[21..].iter().all(|v| !*v));
    }

    #[test]
    fn exact_detections_match_projections() {
        let rig = small_rig(12);
        let hands = generate_hand(1, HandSelection::Both, Articulation::Random);
        let det = simulate_detections(&hands, &rig, &NoiseModel::exact()).unwrap();
        for set in &det.sets {
            for o in &set.observations {
                let cam = rig.iter().find(|c| c.view_id() == o.view_id).unwrap();
                let uv = project(&hands.joints[set.joint_id], cam).unwrap();
                assert_eq!((o.u, o.v, o.confidence), (uv.x, uv.y, 1.0));
            }
        }
        let all_dropped = NoiseModel { dropout_rate: 1.0, ..NoiseModel::exact() };
        let det = simulate_detections(&hands, &rig, &all_dropped).unwrap();
        assert!(det.sets.iter().all(|s| s.observations.is_empty()));
    }

    #[test]
    fn outlier_count_is_binomial() {
        let rig = small_rig(90);
        let hands = generate_hand(2, HandSelection::Right, Articulation::Neutral);
        let noise = NoiseModel { outlier_rate: 0.2, seed: 5, ..NoiseModel::exact() };
        let det = simulate_detections(&hands, &rig, &noise).unwrap();
        let visible = det.sets[ROOT_JOINT].observations.len();
        assert_eq!(visible, 90, "wrist should be visible in every camera");
        for j in 0..JOINTS_PER_HAND {
            let n = det.outlier_views[j].len();
            assert!((10..=26).contains(&n), "joint {j}: {n} outliers");
        }
    }

    #[test]
    fn noiseless_sweep_is_exact() {
        let rig = small_rig(20);
        let skel = vec![generate_hand(4, HandSelection::Both, Articulation::Random)];
        let r = run_view_sweep(&skel, &rig, &NoiseModel::exact(), &[2, 5, 20], 4, &RansacConfig::default()).unwrap();
        for row in &r.rows {
            assert!(row.mean_mm < 1e-6, "{row:?}");
        }
        let single = run_view_sweep(&skel, &rig, &NoiseModel::exact(), &[5], 1, &RansacConfig::default()).unwrap();
        assert_eq!(single.rows[0].std_mm, 0.0);
        assert!(single.warning.is_some());
        assert!(matches!(
            run_view_sweep(&skel, &rig, &NoiseModel::exact(), &[21], 1, &RansacConfig::default()),
            Err(SynthError::InsufficientRig { .. })
        ));
    }

    #[test]
    fn synthetic_dataset_is_clean() {
        let rig = small_rig(30);
        let ds = synth_dataset(&rig, 3, 11);
        assert!(!ds.records.is_empty());
        let report = validate_records(&ds);
        assert!(report.is_clean(), "{}", report.to_text());
        assert!(report.summary.interacting > 0);
    }
}
