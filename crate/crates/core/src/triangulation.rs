//! Multi-view point triangulation.
//!
//! [`triangulate_dlt`] solves the homogeneous linear system built from every
//! observation and optionally polishes the result with Gauss-Newton on the
//! reprojection error. [`triangulate_ransac`] wraps it in a two-view
//! hypothesise-and-verify loop for detections that contain outliers.
//! [`annotate_frame`] runs the robust path for every joint of a frame.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraView, MIN_DEPTH_MM};
use crate::numeric::{self, mix_seed};
use crate::pose::NUM_JOINTS;

/// Smallest triangulation angle accepted between any two rays.
pub const MIN_RAY_ANGLE_DEG: f64 = 0.5;
/// Image width the default inlier threshold refers to.
pub const REFERENCE_IMAGE_WIDTH: f64 = 4096.0;
const GN_MAX_ITERATIONS: usize = 10;
const GN_RELATIVE_STEP: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulationError {
    #[error("need at least 2 usable views, got {available}")]
    InsufficientViews { available: usize },
    #[error("rays are degenerate (max pairwise angle {max_angle_deg:.4} deg)")]
    DegenerateRays { max_angle_deg: f64 },
    #[error("no consensus: best hypothesis has {inliers} inlier views")]
    NoConsensus { inliers: usize },
    #[error("observation references unknown view `{0}`")]
    UnknownView(String),
    #[error("invalid detections: {0}")]
    InvalidDetections(String),
    #[error("invalid RANSAC config: {0}")]
    InvalidConfig(String),
}

/// One 2D detection of a joint in one view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub view_id: String,
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

impl Observation {
    pub fn new(view_id: impl Into<String>, u: f64, v: f64, confidence: f64) -> Self {
        Self {
            view_id: view_id.into(),
            u,
            v,
            confidence,
        }
    }

    pub fn uv(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// All 2D observations of one joint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Detection2DSet {
    pub joint_id: usize,
    pub observations: Vec<Observation>,
}

impl Detection2DSet {
    pub fn new(joint_id: usize, observations: Vec<Observation>) -> Self {
        Self {
            joint_id,
            observations,
        }
    }

    pub fn validate(&self) -> Result<(), TriangulationError> {
        let mut seen = HashSet::new();
        for o in &self.observations {
            if !seen.insert(o.view_id.as_str()) {
                return Err(TriangulationError::InvalidDetections(format!(
                    "joint {}: duplicate view `{}`",
                    self.joint_id, o.view_id
                )));
            }
            if !(0.0..=1.0).contains(&o.confidence) {
                return Err(TriangulationError::InvalidDetections(format!(
                    "joint {}: confidence {} in view `{}` outside [0, 1]",
                    self.joint_id, o.confidence, o.view_id
                )));
            }
            if !(o.u.is_finite() && o.v.is_finite()) {
                return Err(TriangulationError::InvalidDetections(format!(
                    "joint {}: non-finite pixel in view `{}`",
                    self.joint_id, o.view_id
                )));
            }
        }
        Ok(())
    }
}

/// Reprojection residual of a triangulated point in one view; `None` when the
/// point lies behind that camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewResidual {
    pub view_id: String,
    pub residual_px: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangulationResult {
    pub point_world: Vector3<f64>,
    pub inlier_view_ids: Vec<String>,
    /// RMS over the inlier views only.
    pub rms_reprojection_error: f64,
    /// One entry per input observation, inliers and outliers alike.
    pub per_view_residual: Vec<ViewResidual>,
}

impl TriangulationResult {
    pub fn max_inlier_residual(&self) -> f64 {
        let inliers: HashSet<&str> = self.inlier_view_ids.iter().map(String::as_str).collect();
        self.per_view_residual
            .iter()
            .filter(|r| inliers.contains(r.view_id.as_str()))
            .filter_map(|r| r.residual_px)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub inlier_threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_confidence_2d: f64,
    pub refine: bool,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold_px: 10.0,
            confidence: 0.999,
            max_iterations: 500,
            min_confidence_2d: 0.1,
            refine: true,
            seed: 0,
        }
    }
}

impl RansacConfig {
    /// Defaults with the inlier threshold scaled from the 4096 px reference
    /// width to `image_width`.
    pub fn for_image_width(image_width: u32) -> Self {
        Self {
            inlier_threshold_px: 10.0 * image_width as f64 / REFERENCE_IMAGE_WIDTH,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TriangulationError> {
        if !(self.inlier_threshold_px > 0.0) {
            return Err(TriangulationError::InvalidConfig(format!(
                "inlier_threshold_px must be > 0, got {}",
                self.inlier_threshold_px
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(TriangulationError::InvalidConfig(format!(
                "confidence must be in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.max_iterations == 0 {
            return Err(TriangulationError::InvalidConfig(
                "max_iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A resolved observation: camera plus pixel.
#[derive(Clone, Copy)]
struct Ray<'a> {
    cam: &'a CameraView,
    uv: Vector2<f64>,
}

fn resolve<'a>(
    obs: &'a [Observation],
    cams: &'a [CameraView],
) -> Result<Vec<Ray<'a>>, TriangulationError> {
    let by_id: HashMap<&str, &CameraView> = cams.iter().map(|c| (c.view_id(), c)).collect();
    obs.iter()
        .map(|o| {
            by_id
                .get(o.view_id.as_str())
                .map(|cam| Ray { cam, uv: o.uv() })
                .ok_or_else(|| TriangulationError::UnknownView(o.view_id.clone()))
        })
        .collect()
}

fn residual(ray: &Ray<'_>, point: &Vector3<f64>) -> Option<f64> {
    let pc = ray.cam.to_camera(point);
    (pc.z > MIN_DEPTH_MM).then(|| (ray.cam.intrinsics().project_camera_point(&pc) - ray.uv).norm())
}

fn max_pairwise_angle_deg(rays: &[Ray<'_>]) -> f64 {
    let dirs: Vec<Vector3<f64>> = rays.iter().map(|r| r.cam.ray_direction(r.uv.x, r.uv.y)).collect();
    let mut best: f64 = 0.0;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let a = dirs[i].cross(&dirs[j]).norm().atan2(dirs[i].dot(&dirs[j]));
            best = best.max(a);
        }
    }
    best.to_degrees()
}

/// Homogeneous least-squares point from all rays.
///
/// Rows are built in normalised image coordinates and the world frame is
/// re-centred on the camera centres and scaled to unit RMS spread so the
/// 4-column system is well conditioned.
fn linear_point(rays: &[Ray<'_>]) -> Result<Vector3<f64>, TriangulationError> {
    let n = rays.len();
    let centroid = rays.iter().map(|r| *r.cam.campos()).sum::<Vector3<f64>>() / n as f64;
    let spread = (rays
        .iter()
        .map(|r| (r.cam.campos() - centroid).norm_squared())
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let scale = if spread > 1e-9 { spread } else { 1.0 };

    let mut a = DMatrix::<f64>::zeros(2 * n, 4);
    for (i, ray) in rays.iter().enumerate() {
        let k = ray.cam.intrinsics();
        let xn = (ray.uv.x - k.princpt[0]) / k.focal[0];
        let yn = (ray.uv.y - k.princpt[1]) / k.focal[1];
        let r: &Matrix3<f64> = ray.cam.camrot();
        let t = r * (centroid - ray.cam.campos()) / scale;
        let p = |row: usize| [r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]];
        let (p0, p1, p2) = (p(0), p(1), p(2));
        for c in 0..4 {
            a[(2 * i, c)] = xn * p2[c] - p0[c];
            a[(2 * i + 1, c)] = yn * p2[c] - p1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(TriangulationError::DegenerateRays { max_angle_deg: 0.0 })?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("4 singular values");
    let h = v_t.row(min_idx);
    let w = h[3];
    let norm = h.norm();
    if !(w.abs() > 1e-12 * norm) {
        return Err(TriangulationError::DegenerateRays { max_angle_deg: 0.0 });
    }
    Ok(centroid + Vector3::new(h[0], h[1], h[2]) * (scale / w))
}

fn squared_cost(rays: &[Ray<'_>], point: &Vector3<f64>) -> Option<f64> {
    let mut acc = numeric::CompensatedSum::new();
    for ray in rays {
        acc.add(residual(ray, point)?.powi(2));
    }
    Some(acc.value())
}

/// Gauss-Newton on the total squared reprojection error. Steps that would
/// increase the cost (or push the point behind a camera) are halved, so the
/// returned point never has a higher cost than `start`.
fn refine_point(rays: &[Ray<'_>], start: Vector3<f64>) -> Vector3<f64> {
    let Some(mut cost) = squared_cost(rays, &start) else {
        return start;
    };
    let mut x = start;
    for _ in 0..GN_MAX_ITERATIONS {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for ray in rays {
            let r = ray.cam.camrot();
            let pc = ray.cam.to_camera(&x);
            let k = ray.cam.intrinsics();
            let proj = k.project_camera_point(&pc);
            let res = proj - ray.uv;
            let inv_z = 1.0 / pc.z;
            let r0 = r.row(0).transpose();
            let r1 = r.row(1).transpose();
            let r2 = r.row(2).transpose();
            let ju = (r0 - r2 * (pc.x * inv_z)) * (k.focal[0] * inv_z);
            let jv = (r1 - r2 * (pc.y * inv_z)) * (k.focal[1] * inv_z);
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * res.x + jv * res.y;
        }
        let Some(step) = jtj.cholesky().map(|c| c.solve(&(-jtr))) else {
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let candidate = x + step * alpha;
            if let Some(c) = squared_cost(rays, &candidate) {
                if c <= cost {
                    accepted = Some((candidate, c));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((next, next_cost)) = accepted else {
            break;
        };
        let moved = (next - x).norm();
        x = next;
        cost = next_cost;
        if moved < GN_RELATIVE_STEP * x.norm().max(1.0) {
            break;
        }
    }
    x
}

fn solve_rays(rays: &[Ray<'_>], refine: bool) -> Result<Vector3<f64>, TriangulationError> {
    if rays.len() < 2 {
        return Err(TriangulationError::InsufficientViews {
            available: rays.len(),
        });
    }
    let angle = max_pairwise_angle_deg(rays);
    if angle < MIN_RAY_ANGLE_DEG {
        return Err(TriangulationError::DegenerateRays {
            max_angle_deg: angle,
        });
    }
    let p = linear_point(rays).map_err(|_| TriangulationError::DegenerateRays {
        max_angle_deg: angle,
    })?;
    Ok(if refine { refine_point(rays, p) } else { p })
}

fn build_result(
    point: Vector3<f64>,
    obs: &[Observation],
    rays: &[Ray<'_>],
    inliers: &[usize],
) -> TriangulationResult {
    let per_view_residual: Vec<ViewResidual> = obs
        .iter()
        .zip(rays)
        .map(|(o, r)| ViewResidual {
            view_id: o.view_id.clone(),
            residual_px: residual(r, &point),
        })
        .collect();
    let sq: Vec<f64> = inliers
        .iter()
        .map(|&i| per_view_residual[i].residual_px.unwrap_or(f64::INFINITY).powi(2))
        .collect();
    let rms = numeric::mean(sq).map(f64::sqrt).unwrap_or(0.0);
    TriangulationResult {
        point_world: point,
        inlier_view_ids: inliers.iter().map(|&i| obs[i].view_id.clone()).collect(),
        rms_reprojection_error: rms,
        per_view_residual,
    }
}

/// Linear triangulation from every observation, with optional Gauss-Newton
/// refinement (at most 10 iterations).
pub fn triangulate_dlt(
    obs: &Detection2DSet,
    cams: &[CameraView],
    refine: bool,
) -> Result<TriangulationResult, TriangulationError> {
    obs.validate()?;
    let rays = resolve(&obs.observations, cams)?;
    let point = solve_rays(&rays, refine)?;
    let all: Vec<usize> = (0..rays.len()).collect();
    Ok(build_result(point, &obs.observations, &rays, &all))
}

/// Number of RANSAC iterations needed to draw one all-inlier pair with
/// probability `confidence` given inlier ratio `w`.
pub fn adaptive_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let p_good = inlier_ratio * inlier_ratio;
    if p_good <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if !n.is_finite() {
        return cap;
    }
    (n.ceil() as usize).clamp(1, cap)
}

fn inliers_of(rays: &[Ray<'_>], usable: &[usize], point: &Vector3<f64>, thr: f64) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut total = 0.0;
    for &i in usable {
        if let Some(r) = residual(&rays[i], point) {
            if r <= thr {
                idx.push(i);
                total += r;
            }
        }
    }
    (idx, total)
}

/// Robust triangulation: two-view hypotheses drawn from a seeded RNG, inliers
/// gated on reprojection residual, adaptive stopping, and a final
/// (refined) fit on the consensus set.
pub fn triangulate_ransac(
    obs: &Detection2DSet,
    cams: &[CameraView],
    cfg: &RansacConfig,
) -> Result<TriangulationResult, TriangulationError> {
    cfg.validate()?;
    obs.validate()?;
    let rays = resolve(&obs.observations, cams)?;
    let usable: Vec<usize> = obs
        .observations
        .iter()
        .enumerate()
        .filter(|(_, o)| o.confidence >= cfg.min_confidence_2d)
        .map(|(i, _)| i)
        .collect();
    let n = usable.len();
    if n < 2 {
        return Err(TriangulationError::InsufficientViews { available: n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed));
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut iteration = 0;
    while iteration < needed {
        iteration += 1;
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let pair = [rays[usable[a]], rays[usable[b]]];
        let Ok(point) = solve_rays(&pair, false) else {
            continue;
        };
        let (inliers, total) = inliers_of(&rays, &usable, &point, cfg.inlier_threshold_px);
        let better = match &best {
            None => true,
            Some((bi, bt)) => inliers.len() > bi.len() || (inliers.len() == bi.len() && total < *bt),
        };
        if better {
            needed = adaptive_iterations(
                inliers.len() as f64 / n as f64,
                cfg.confidence,
                cfg.max_iterations,
            );
            best = Some((inliers, total));
        }
    }

    let inliers = best.map(|(i, _)| i).unwrap_or_default();
    if inliers.len() < 2 {
        return Err(TriangulationError::NoConsensus {
            inliers: inliers.len(),
        });
    }
    let fit = |set: &[usize]| {
        let subset: Vec<Ray<'_>> = set.iter().map(|&i| rays[i]).collect();
        solve_rays(&subset, cfg.refine)
    };
    let mut point = fit(&inliers)?;
    let mut inliers = inliers;
    let (rescored, _) = inliers_of(&rays, &usable, &point, cfg.inlier_threshold_px);
    if rescored != inliers && rescored.len() >= 2 {
        if let Ok(p) = fit(&rescored) {
            point = p;
            inliers = rescored;
        }
    }
    Ok(build_result(point, &obs.observations, &rays, &inliers))
}

/// Projection of a point into one view; `uv` is `None` when the point is
/// behind the camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reprojection {
    pub view_id: String,
    pub uv: Option<Vector2<f64>>,
}

impl Reprojection {
    pub fn behind_camera(&self) -> bool {
        self.uv.is_none()
    }
}

pub fn reproject_all(point_world: &Vector3<f64>, cams: &[CameraView]) -> Vec<Reprojection> {
    cams.iter()
        .map(|cam| Reprojection {
            view_id: cam.view_id().to_string(),
            uv: crate::geometry::project(point_world, cam).ok(),
        })
        .collect()
}

/// Robust triangulation of every joint of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTriangulation {
    pub joints: Vec<Option<TriangulationResult>>,
    pub valid: Vec<bool>,
}

impl FrameTriangulation {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Per-joint RANSAC triangulation. Joints that cannot be triangulated are
/// marked invalid. Each joint uses seed `cfg.seed ^ joint_id`, so the result
/// does not depend on evaluation order. The first set wins if a joint id
/// appears more than once; ids outside the schema are ignored.
pub fn annotate_frame(
    per_joint: &[Detection2DSet],
    cams: &[CameraView],
    cfg: &RansacConfig,
) -> FrameTriangulation {
    let mut by_joint: Vec<Option<&Detection2DSet>> = vec![None; NUM_JOINTS];
    for set in per_joint {
        if set.joint_id < NUM_JOINTS && by_joint[set.joint_id].is_none() {
            by_joint[set.joint_id] = Some(set);
        }
    }
    let joints: Vec<Option<TriangulationResult>> = by_joint
        .par_iter()
        .enumerate()
        .map(|(j, set)| {
            let set = (*set)?;
            let joint_cfg = RansacConfig {
                seed: cfg.seed ^ j as u64,
                ..cfg.clone()
            };
            triangulate_ransac(set, cams, &joint_cfg).ok()
        })
        .collect();
    let valid = joints.iter().map(Option::is_some).collect();
    FrameTriangulation { joints, valid }
}
