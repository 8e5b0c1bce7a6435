//! Training loss values and evaluation metrics.
//!
//! Losses are plain numbers here; no gradients are computed. Metric
//! reductions use compensated summation so their value does not depend on
//! the order in which samples are visited.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heatmap::HeatmapVolume;
use crate::numeric::{self, CompensatedSum};
use crate::pose::{root_align, Hand, HandPair, Handedness, Pose3D, JOINTS_PER_HAND, ROOT_JOINT};

/// Clamp applied to probabilities before taking logs.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("no frame qualifies for this metric")]
    NoQualifyingFrames,
    #[error("no positive {} labels; average precision undefined", .0.name())]
    NoPositives(Hand),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("missing ground truth: {0}")]
    MissingTruth(String),
}

/// Ground truth of one frame.
///
/// `heatmaps` are only needed by [`loss_pose`]; evaluation leaves them empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameTruth {
    pub presence: HandPair<bool>,
    pub heatmaps: HandPair<Option<HeatmapVolume>>,
    /// Left root depth minus right root depth, when both hands exist.
    pub z_rel: Option<f64>,
    pub poses: HandPair<Option<Pose3D>>,
}

/// Network output of one frame, lifted to camera space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub poses: HandPair<Option<Pose3D>>,
    pub handedness: Handedness,
    pub z_rel: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub pred: FramePrediction,
    pub truth: FrameTruth,
}

pub type EvalBatch = [EvalSample];

/// `-1/2 * sum over hands of (d log h + (1 - d) log(1 - h))`, with `h`
/// clamped to `[eps, 1 - eps]`.
pub fn loss_handedness(h: &Handedness, delta: HandPair<bool>) -> f64 {
    let term = |p: f64, d: bool| {
        let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        if d {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    };
    -0.5 * (term(h.right, delta.right) + term(h.left, delta.left))
}

/// Sum over present hands of `||H - H*||_2`. Absent hands contribute zero.
pub fn loss_pose(pred: HandPair<&HeatmapVolume>, truth: &FrameTruth) -> Result<f64, ObjectiveError> {
    let mut total = CompensatedSum::new();
    for hand in Hand::BOTH {
        if !*truth.presence.get(hand) {
            continue;
        }
        let gt = truth.heatmaps.get(hand).as_ref().ok_or_else(|| {
            ObjectiveError::MissingTruth(format!("{} hand is present but has no heatmap", hand.name()))
        })?;
        let d = pred
            .get(hand)
            .l2_distance(gt)
            .map_err(|e| ObjectiveError::DimMismatch(e.to_string()))?;
        total.add(d);
    }
    Ok(total.value())
}

/// `|z_pred - z*|` when both hands are present, zero otherwise.
pub fn loss_rel(z_pred: f64, truth: &FrameTruth) -> Result<f64, ObjectiveError> {
    if !(truth.presence.right && truth.presence.left) {
        return Ok(0.0);
    }
    let gt = truth
        .z_rel
        .ok_or_else(|| ObjectiveError::MissingTruth("two-hand frame without z_rel".into()))?;
    Ok((z_pred - gt).abs())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub handedness: f64,
    pub pose: f64,
    pub rel: f64,
}

pub fn loss_total(c: &LossComponents) -> f64 {
    c.handedness + c.pose + c.rel
}

/// Per-hand mean joint error after root alignment, or `None` if the pair
/// does not qualify (gt root invalid or prediction missing).
fn aligned_errors(pred: &Pose3D, gt: &Pose3D) -> Option<Vec<Option<f64>>> {
    let gt_a = root_align(gt).ok()?;
    let pred_a = root_align(pred).ok()?;
    Some(
        (0..JOINTS_PER_HAND)
            .map(|j| {
                (gt.valid[j] && pred.valid[j]).then(|| (pred_a.joints[j] - gt_a.joints[j]).norm())
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpjpeReport {
    /// Mean over all evaluated (frame, hand) pairs of the per-pair mean error.
    pub mpjpe: f64,
    pub per_hand: HandPair<Option<f64>>,
    /// Per in-hand joint (T4 … P1, wrist), averaged over both hands;
    /// `None` if never evaluated.
    pub per_joint: Vec<Option<f64>>,
    pub per_hand_joint: HandPair<Vec<Option<f64>>>,
    pub pairs_evaluated: usize,
    /// Pairs whose ground truth hand exists but whose prediction is absent.
    pub missing_predictions: usize,
}

/// Mean per-joint position error after per-hand root alignment.
///
/// A joint contributes iff its ground truth is valid and its hand's ground
/// truth root is valid. Each (frame, hand) pair is first averaged over its
/// contributing joints; pairs are then averaged.
pub fn mpjpe(batch: &EvalBatch) -> Result<MpjpeReport, ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let mut overall = CompensatedSum::new();
    let mut per_hand = HandPair::new((CompensatedSum::new(), 0usize), (CompensatedSum::new(), 0usize));
    let mut per_joint = vec![(CompensatedSum::new(), 0usize); JOINTS_PER_HAND];
    let mut per_hand_joint = HandPair::new(per_joint.clone(), per_joint.clone());
    let mut pairs = 0;
    let mut missing = 0;
    for sample in batch {
        for hand in Hand::BOTH {
            let Some(gt) = sample.truth.poses.get(hand) else {
                continue;
            };
            if !gt.valid[ROOT_JOINT] {
                continue;
            }
            let Some(pred) = sample.pred.poses.get(hand) else {
                missing += 1;
                continue;
            };
            let Some(errors) = aligned_errors(pred, gt) else {
                missing += 1;
                continue;
            };
            let Some(pair_mean) = numeric::mean(errors.iter().flatten().copied()) else {
                continue;
            };
            for (j, e) in errors.iter().enumerate() {
                if let Some(e) = e {
                    per_joint[j].0.add(*e);
                    per_joint[j].1 += 1;
                    let hj = &mut per_hand_joint.get_mut(hand)[j];
                    hj.0.add(*e);
                    hj.1 += 1;
                }
            }
            overall.add(pair_mean);
            let slot = per_hand.get_mut(hand);
            slot.0.add(pair_mean);
            slot.1 += 1;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(ObjectiveError::NoQualifyingFrames);
    }
    let avg = |(s, n): (CompensatedSum, usize)| (n > 0).then(|| s.value() / n as f64);
    Ok(MpjpeReport {
        mpjpe: overall.value() / pairs as f64,
        per_hand: per_hand.map(|_, v| avg(v)),
        per_joint: per_joint.into_iter().map(avg).collect(),
        per_hand_joint: per_hand_joint.map(|_, v| v.into_iter().map(avg).collect()),
        pairs_evaluated: pairs,
        missing_predictions: missing,
    })
}

fn root_vector(poses: &HandPair<Option<Pose3D>>) -> Option<Vector3<f64>> {
    let r = poses.right.as_ref()?.root()?;
    let l = poses.left.as_ref()?.root()?;
    Some(l - r)
}

/// Mean error of the right-root → left-root vector over frames where both
/// ground-truth roots are valid and both hands were predicted.
pub fn mrrpe(batch: &EvalBatch) -> Result<f64, ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    numeric::mean(batch.iter().filter_map(|s| {
        let gt = root_vector(&s.truth.poses)?;
        let pred = root_vector(&s.pred.poses)?;
        Some((pred - gt).norm())
    }))
    .ok_or(ObjectiveError::NoQualifyingFrames)
}

/// All-point interpolated average precision. Tied scores form a single
/// operating point. Returns `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // (recall, precision) at each distinct threshold, descending score
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let envelope = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (points[k].0 - prev_recall) * envelope;
        prev_recall = points[k].0;
    }
    Some(ap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandednessReport {
    /// Mean of the per-hand average precisions.
    pub ap: f64,
    pub per_hand: HandPair<f64>,
    /// Fraction of (frame, hand) decisions correct at `h >= 0.5`.
    pub accuracy_at_threshold: f64,
}

/// Handedness average precision, averaged over the two hands.
pub fn ap_handedness(batch: &EvalBatch) -> Result<HandednessReport, ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let per_hand = HandPair::new(Hand::Right, Hand::Left).map(|_, hand| {
        let scores: Vec<f64> = batch.iter().map(|s| s.pred.handedness.get(hand)).collect();
        let labels: Vec<bool> = batch.iter().map(|s| *s.truth.presence.get(hand)).collect();
        average_precision(&scores, &labels).ok_or(ObjectiveError::NoPositives(hand))
    });
    let per_hand = HandPair::new(per_hand.right?, per_hand.left?);
    let correct = batch
        .iter()
        .flat_map(|s| {
            Hand::BOTH.map(|hand| s.pred.handedness.present(hand) == *s.truth.presence.get(hand))
        })
        .filter(|c| *c)
        .count();
    Ok(HandednessReport {
        ap: (per_hand.right + per_hand.left) / 2.0,
        per_hand,
        accuracy_at_threshold: correct as f64 / (2 * batch.len()) as f64,
    })
}

/// Single-hand sample for [`epe`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpeSample {
    pub pred: Pose3D,
    pub gt: Pose3D,
}

/// Mean end-point error after root alignment (single-hand protocol).
pub fn epe(samples: &[EpeSample]) -> Result<f64, ObjectiveError> {
    if samples.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    numeric::mean(samples.iter().filter_map(|s| {
        let errors = aligned_errors(&s.pred, &s.gt)?;
        numeric::mean(errors.into_iter().flatten())
    }))
    .ok_or(ObjectiveError::NoQualifyingFrames)
}

/// Combined evaluation output: per-joint MPJPE table, MRRPE and AP_h.
///
/// Metrics that are undefined for the batch (no two-hand frames, no
/// positives) are `None` rather than an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: String,
    pub frames: usize,
    pub mpjpe: Option<MpjpeReport>,
    pub mrrpe_mm: Option<f64>,
    pub handedness: Option<HandednessReport>,
}

pub fn evaluate(batch: &EvalBatch) -> Result<EvalReport, ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    fn optional<T>(r: Result<T, ObjectiveError>) -> Result<Option<T>, ObjectiveError> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(ObjectiveError::NoQualifyingFrames | ObjectiveError::NoPositives(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
    Ok(EvalReport {
        format_version: crate::FORMAT_VERSION.to_string(),
        frames: batch.len(),
        mpjpe: optional(mpjpe(batch))?,
        mrrpe_mm: optional(mrrpe(batch))?,
        handedness: optional(ap_handedness(batch))?,
    })
}

impl EvalReport {
    /// Plain-text rendering: one MPJPE row per hand (T4 … P1, avg).
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let mut out = String::new();
        let _ = writeln!(out, "frames: {}", self.frames);
        let labels = crate::pose::finger_joint_labels();
        let _ = write!(out, "MPJPE (mm) {:>6}", "hand");
        for l in &labels {
            let _ = write!(out, " {l:>6}");
        }
        let _ = writeln!(out, " {:>7}", "avg");
        match &self.mpjpe {
            Some(m) => {
                let rows = Hand::BOTH
                    .map(|h| (h.name(), m.per_hand_joint.get(h).as_slice(), *m.per_hand.get(h)));
                for (name, joints, avg) in rows.into_iter().chain([("all", m.per_joint.as_slice(), Some(m.mpjpe))]) {
                    let _ = write!(out, "{name:>17}");
                    for j in 0..labels.len() {
                        let _ = write!(out, " {:>6}", fmt(joints[j]));
                    }
                    let _ = writeln!(out, " {:>7}", fmt(avg));
                }
                let _ = writeln!(out, "MPJPE all: {} mm over {} hand instances ({} missing predictions)",
                    fmt(Some(m.mpjpe)), m.pairs_evaluated, m.missing_predictions);
            }
            None => {
                let _ = writeln!(out, "MPJPE all: undefined (no qualifying hands)");
            }
        }
        let _ = writeln!(out, "MRRPE: {}", self.mrrpe_mm.map_or("undefined".to_string(), |v| format!("{v:.2} mm")));
        match &self.handedness {
            Some(h) => {
                let _ = writeln!(
                    out,
                    "AP_h: {:.4} (right {:.4}, left {:.4}); accuracy at 0.5: {:.4}",
                    h.ap, h.per_hand.right, h.per_hand.left, h.accuracy_at_threshold
                );
            }
            None => {
                let _ = writeln!(out, "AP_h: undefined (a hand has no positive frames)");
            }
        }
        out
    }
}
