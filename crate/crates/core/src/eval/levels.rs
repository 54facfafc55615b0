use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::{metrics, ConfusionMatrix};
use crate::data::{AnnotatedFrame, Object, PatientLabel};
use crate::geometry::{match_proposals, BBox, Detection, MatchCriterion};
use crate::{Error, Result};

/// Detections for one frame; also the JSON-lines inference record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_id: String,
    pub detections: Vec<Detection>,
}

impl FrameDetections {
    pub fn is_positive(&self) -> bool {
        self.detections.iter().any(|d| d.label.is_positive())
    }
}

/// Ground truth for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_id: String,
    pub objects: Vec<Object>,
}

impl FrameTruth {
    pub fn is_positive(&self) -> bool {
        self.objects.iter().any(|o| o.label.is_positive())
    }
}

impl From<&AnnotatedFrame> for FrameTruth {
    fn from(f: &AnnotatedFrame) -> Self {
        Self {
            frame_id: f.frame_id.clone(),
            objects: f.objects.clone(),
        }
    }
}

/// Proposal boxes for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameProposals {
    pub frame_id: String,
    pub boxes: Vec<BBox>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientVerdict {
    pub patient_id: String,
    pub occupant: bool,
}

/// Pairs each item of `left` with the item of `right` sharing its id, failing
/// when the id sets differ or contain duplicates.
fn join<'a, A, B>(
    what: &str,
    left: &'a [A],
    left_id: impl Fn(&A) -> &str,
    right: &'a [B],
    right_id: impl Fn(&B) -> &str,
) -> Result<Vec<(&'a A, &'a B)>> {
    let mut by_id: BTreeMap<&str, &B> = BTreeMap::new();
    for r in right {
        if by_id.insert(right_id(r), r).is_some() {
            return Err(Error::Metric(format!("duplicate {what} {:?} in ground truth", right_id(r))));
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(left.len());
    for l in left {
        let id = left_id(l);
        if !seen.insert(id) {
            return Err(Error::Metric(format!("duplicate {what} {id:?} in predictions")));
        }
        let r = by_id
            .get(id)
            .ok_or_else(|| Error::Metric(format!("{what} {id:?} has predictions but no ground truth")))?;
        out.push((l, *r));
    }
    if let Some(missing) = by_id.keys().find(|id| !seen.contains(*id)) {
        return Err(Error::Metric(format!("{what} {missing:?} has ground truth but no predictions")));
    }
    Ok(out)
}

/// A frame is predicted positive iff it has a space-occupying detection and
/// actually positive iff it holds a space-occupying object.
pub fn image_level_cm(preds: &[FrameDetections], truth: &[FrameTruth]) -> Result<ConfusionMatrix> {
    let pairs = join("frame", preds, |p| &p.frame_id, truth, |t| &t.frame_id)?;
    let mut cm = ConfusionMatrix::default();
    for (p, t) in pairs {
        cm.record(p.is_positive(), t.is_positive());
    }
    Ok(cm)
}

pub fn patient_level_cm(
    verdicts: &[PatientVerdict],
    labels: &[(String, PatientLabel)],
) -> Result<ConfusionMatrix> {
    let pairs = join("patient", verdicts, |v| &v.patient_id, labels, |l| &l.0)?;
    let mut cm = ConfusionMatrix::default();
    for (v, (_, label)) in pairs {
        cm.record(v.occupant, label.is_positive());
    }
    Ok(cm)
}

/// Proposal-level counts under `criterion`:
///
/// - TP: proposals matched to a space-occupying object;
/// - FP: every other proposal on a positive frame, and proposals matched to a
///   non-space-occupying object on a negative frame;
/// - TN: unmatched proposals on negative frames;
/// - FN: space-occupying objects no proposal matched.
pub fn rpn_level_cm(
    proposals: &[FrameProposals],
    truth: &[FrameTruth],
    criterion: &MatchCriterion,
) -> Result<ConfusionMatrix> {
    criterion.validate()?;
    let pairs = join("frame", proposals, |p| &p.frame_id, truth, |t| &t.frame_id)?;
    let mut cm = ConfusionMatrix::default();
    for (p, t) in pairs {
        let gts: Vec<_> = t.objects.iter().map(|o| (o.bbox, o.label)).collect();
        let m = match_proposals(&p.boxes, &gts, criterion)?;
        let positive_frame = t.is_positive();
        for a in &m.assignments {
            match a {
                Some(g) if gts[*g].1.is_positive() => cm.tp += 1,
                None if !positive_frame => cm.tn += 1,
                _ => cm.fp += 1,
            }
        }
        cm.fn_ += gts
            .iter()
            .zip(&m.gt_matched)
            .filter(|((_, l), hit)| l.is_positive() && !**hit)
            .count() as u64;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// One point per swept threshold, in sweep order.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Points sorted by (FPR, TPR) with the (0, 0) and (1, 1) endpoints.
    pub fn closed_curve(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0), (1.0, 1.0)];
        pts.extend(self.points.iter().map(|p| (p.fpr, p.tpr)));
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts
    }
}

/// Evenly spaced thresholds over `[0, 1]`, both ends included.
pub fn threshold_sweep(count: usize) -> Vec<f64> {
    let n = count.max(2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Sweeps the match threshold of `criterion` and records one (FPR, TPR)
/// point per threshold from [`rpn_level_cm`]. An undefined FPR (no negative
/// proposals) counts as 0; thresholds with an undefined TPR are skipped.
pub fn roc_over_iou(
    proposals: &[FrameProposals],
    truth: &[FrameTruth],
    criterion: &MatchCriterion,
    thresholds: &[f64],
) -> Result<RocCurve> {
    if thresholds.len() < 2 {
        return Err(Error::Config(format!(
            "ROC sweep needs at least 2 thresholds, got {}",
            thresholds.len()
        )));
    }
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let cm = rpn_level_cm(proposals, truth, &criterion.with_threshold(t))?;
        let m = metrics(&cm);
        if let Some(tpr) = m.sensitivity {
            points.push(RocPoint {
                threshold: t,
                fpr: m.false_positive_rate.unwrap_or(0.0),
                tpr,
            });
        }
    }
    let mut curve = RocCurve { points, auc: 0.0 };
    curve.auc = trapezoid_auc(&curve.closed_curve());
    Ok(curve)
}

pub fn trapezoid_auc(sorted: &[(f64, f64)]) -> f64 {
    sorted
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}
