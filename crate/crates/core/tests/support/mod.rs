//! Shared fixtures and naive reference implementations for the integration
//! tests. The oracles are deliberately written as plain loops and share no
//! code with the library.
#![allow(dead_code)]

use nalgebra::{Vector2, Vector3};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use handrig::geometry::{look_at, CameraView};
use handrig::heatmap::{HeatmapVolume, VolumeDims};
use handrig::objectives::{EvalSample, FramePrediction, FrameTruth};
use handrig::pose::{HandPair, Handedness, Pose3D, JOINTS_PER_HAND, ROOT_JOINT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// A camera `dist` mm from `target`, looking at it.
pub fn camera_towards<R: Rng>(rng: &mut R, id: usize, target: &Vector3<f64>, dist: f64) -> CameraView {
    let dir = unit(rng);
    let campos = target + dir * dist;
    let hint = if dir.z.abs() > 0.9 { Vector3::y() } else { -Vector3::z() };
    let rot = look_at(&campos, target, &hint);
    let f = rng.random_range(1200.0..3000.0);
    CameraView::new(format!("v{id:02}"), campos, rot, [f, f * rng.random_range(0.98..1.02)], [2047.5, 1333.5], [4096, 2668])
        .unwrap()
}

/// `n` cameras around `target` whose optical axes are pairwise at least
/// `min_deg` apart.
pub fn spread_cameras<R: Rng>(rng: &mut R, n: usize, target: &Vector3<f64>, min_deg: f64) -> Vec<CameraView> {
    let mut cams: Vec<CameraView> = Vec::new();
    while cams.len() < n {
        let d = rng.random_range(600.0..3000.0);
        let c = camera_towards(rng, cams.len(), target, d);
        let ok = cams.iter().all(|o| {
            let cos = c.optical_axis().dot(&o.optical_axis()).clamp(-1.0, 1.0);
            cos.acos().to_degrees() >= min_deg
        });
        if ok {
            cams.push(c);
        }
    }
    cams
}

pub fn pinhole(p: &Vector3<f64>, cam: &CameraView) -> Vector2<f64> {
    let rot = cam.camrot();
    let mut x = [0.0; 3];
    for r in 0..3 {
        for c in 0..3 {
            x[r] += rot[(r, c)] * (p[c] - cam.campos()[c]);
        }
    }
    let [fx, fy] = cam.focal();
    let [cx, cy] = cam.princpt();
    Vector2::new(fx * x[0] / x[2] + cx, fy * x[1] / x[2] + cy)
}

// ---- random poses and batches ----

/// One hand of 21 joints around `root`. With `dyadic`, every coordinate is a
/// multiple of 1/64 so sums of a few terms are exact.
pub fn random_pose<R: Rng>(rng: &mut R, root: Vector3<f64>, p_valid: f64, dyadic: bool) -> Pose3D {
    let q = |x: f64| if dyadic { (x * 64.0).round() / 64.0 } else { x };
    let root = root.map(q);
    let joints = (0..JOINTS_PER_HAND)
        .map(|j| {
            if j == ROOT_JOINT {
                root
            } else {
                root + Vector3::new(rng.random_range(-120.0..120.0), rng.random_range(-120.0..120.0), rng.random_range(-120.0..120.0)).map(q)
            }
        })
        .collect();
    let valid = (0..JOINTS_PER_HAND).map(|_| rng.random_bool(p_valid)).collect();
    Pose3D { joints, valid }
}

pub fn perturbed<R: Rng>(rng: &mut R, pose: &Pose3D, sigma: f64, p_valid: f64, dyadic: bool) -> Pose3D {
    let q = |x: f64| if dyadic { (x * 64.0).round() / 64.0 } else { x };
    Pose3D {
        joints: pose
            .joints
            .iter()
            .map(|p| p + Vector3::new(rng.random_range(-sigma..sigma), rng.random_range(-sigma..sigma), rng.random_range(-sigma..sigma)).map(q))
            .collect(),
        valid: (0..JOINTS_PER_HAND).map(|_| rng.random_bool(p_valid)).collect(),
    }
}

pub fn random_volume<R: Rng>(rng: &mut R, dims: VolumeDims) -> HeatmapVolume {
    let values = Array4::from_shape_fn((dims.joints, dims.depth, dims.height, dims.width), |_| rng.random::<f64>());
    HeatmapVolume::new(values).unwrap()
}

pub const SMALL_DIMS: VolumeDims = VolumeDims { joints: 21, depth: 3, height: 4, width: 5 };

/// A batch with at least one frame holding both hands and one holding
/// neither, so both hands have positives and negatives.
pub fn random_batch<R: Rng>(rng: &mut R, dyadic: bool) -> Vec<EvalSample> {
    let n = rng.random_range(3..14);
    (0..n)
        .map(|i| {
            let presence = match i {
                0 => HandPair::new(true, true),
                1 => HandPair::new(false, false),
                _ => HandPair::new(rng.random_bool(0.6), rng.random_bool(0.6)),
            };
            let base = Vector3::new(rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), rng.random_range(400.0..900.0));
            let truth_pose = |rng: &mut R, present: bool, offset: f64| {
                present.then(|| {
                    let mut p = random_pose(rng, base + Vector3::new(offset, 0.0, 0.0), 0.9, dyadic);
                    p.valid[ROOT_JOINT] = rng.random_bool(0.9);
                    p
                })
            };
            let gt = HandPair::new(truth_pose(rng, presence.right, 0.0), truth_pose(rng, presence.left, 150.0));
            let pred_pose = |rng: &mut R, gt: &Option<Pose3D>| {
                let gt = gt.as_ref()?;
                rng.random_bool(0.85).then(|| perturbed(rng, gt, 20.0, 0.95, dyadic))
            };
            let pred = HandPair::new(pred_pose(rng, &gt.right), pred_pose(rng, &gt.left));
            let heatmaps = HandPair::new(
                presence.right.then(|| random_volume(rng, SMALL_DIMS)),
                presence.left.then(|| random_volume(rng, SMALL_DIMS)),
            );
            EvalSample {
                pred: FramePrediction {
                    poses: pred,
                    handedness: Handedness::new(rng.random(), rng.random()).unwrap(),
                    z_rel: Some(rng.random_range(-100.0..100.0)),
                },
                truth: FrameTruth {
                    presence,
                    heatmaps,
                    z_rel: Some(rng.random_range(-100.0..100.0)),
                    poses: gt,
                },
            }
        })
        .collect()
}

// ---- oracles ----

pub fn oracle_bce(p: f64, label: bool) -> f64 {
    let p = p.max(1e-7).min(1.0 - 1e-7);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn oracle_loss_h(h: &Handedness, right: bool, left: bool) -> f64 {
    (oracle_bce(h.right, right) + oracle_bce(h.left, left)) / 2.0
}

pub fn oracle_l2(a: &HeatmapVolume, b: &HeatmapVolume) -> f64 {
    let (va, vb) = (a.values(), b.values());
    let s = va.shape();
    let mut acc = 0.0;
    for j in 0..s[0] {
        for z in 0..s[1] {
            for y in 0..s[2] {
                for x in 0..s[3] {
                    let d = va[[j, z, y, x]] - vb[[j, z, y, x]];
                    acc += d * d;
                }
            }
        }
    }
    acc.sqrt()
}

pub fn dist(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Mean root-relative joint error of one hand, `None` if no joint counts.
fn oracle_hand_error(pred: &Pose3D, gt: &Pose3D) -> Option<f64> {
    if !pred.valid[ROOT_JOINT] || !gt.valid[ROOT_JOINT] {
        return None;
    }
    let (pr, gr) = (pred.joints[ROOT_JOINT], gt.joints[ROOT_JOINT]);
    let mut total = 0.0;
    let mut n = 0;
    for j in 0..JOINTS_PER_HAND {
        if pred.valid[j] && gt.valid[j] {
            total += dist(&(pred.joints[j] - pr), &(gt.joints[j] - gr));
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

pub fn oracle_mpjpe(batch: &[EvalSample]) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for s in batch {
        for (p, g) in [(&s.pred.poses.right, &s.truth.poses.right), (&s.pred.poses.left, &s.truth.poses.left)] {
            if let (Some(p), Some(g)) = (p, g) {
                if let Some(e) = oracle_hand_error(p, g) {
                    total += e;
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| total / n as f64)
}

pub fn oracle_mrrpe(batch: &[EvalSample]) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for s in batch {
        let (Some(pr), Some(pl), Some(gr), Some(gl)) =
            (&s.pred.poses.right, &s.pred.poses.left, &s.truth.poses.right, &s.truth.poses.left)
        else {
            continue;
        };
        if !(pr.valid[ROOT_JOINT] && pl.valid[ROOT_JOINT] && gr.valid[ROOT_JOINT] && gl.valid[ROOT_JOINT]) {
            continue;
        }
        let vp = pl.joints[ROOT_JOINT] - pr.joints[ROOT_JOINT];
        let vg = gl.joints[ROOT_JOINT] - gr.joints[ROOT_JOINT];
        total += dist(&vp, &vg);
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

/// Brute force over every distinct score used as a threshold: precision is
/// interpolated as the best precision at any lower threshold.
pub fn oracle_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let pr: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let mut tp = 0;
            let mut taken = 0;
            for (s, l) in scores.iter().zip(labels) {
                if *s >= t {
                    taken += 1;
                    if *l {
                        tp += 1;
                    }
                }
            }
            (tp as f64 / positives as f64, tp as f64 / taken as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for (k, (recall, _)) in pr.iter().enumerate() {
        let mut best = 0.0f64;
        for (_, p) in &pr[k..] {
            best = best.max(*p);
        }
        ap += (recall - last_recall) * best;
        last_recall = *recall;
    }
    Some(ap)
}

pub fn oracle_ap_h(batch: &[EvalSample]) -> Option<f64> {
    let right = oracle_ap(
        &batch.iter().map(|s| s.pred.handedness.right).collect::<Vec<_>>(),
        &batch.iter().map(|s| s.truth.presence.right).collect::<Vec<_>>(),
    )?;
    let left = oracle_ap(
        &batch.iter().map(|s| s.pred.handedness.left).collect::<Vec<_>>(),
        &batch.iter().map(|s| s.truth.presence.left).collect::<Vec<_>>(),
    )?;
    Some((right + left) / 2.0)
}

pub fn oracle_epe(pairs: &[(Pose3D, Pose3D)]) -> Option<f64> {
    let errors: Vec<f64> = pairs.iter().filter_map(|(p, g)| oracle_hand_error(p, g)).collect();
    (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64)
}
