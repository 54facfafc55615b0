use std::cmp::Ordering;

use super::{iou, BBox, Detection};
use crate::{Error, Result};

/// Descending score, then smaller `x_min`, then smaller `y_min`.
pub(crate) fn rank_order(sa: f64, a: &BBox, sb: f64, b: &BBox) -> Ordering {
    sb.total_cmp(&sa)
        .then(a.x_min.total_cmp(&b.x_min))
        .then(a.y_min.total_cmp(&b.y_min))
}

fn check_threshold(iou_threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::Config(format!(
            "NMS IoU threshold {iou_threshold} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Class-agnostic greedy NMS. Returns indices into `boxes` of the kept boxes,
/// in rank order. A box survives iff its IoU with every kept box is at most
/// `iou_threshold`.
pub fn nms_indices(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    check_threshold(iou_threshold)?;
    if boxes.len() != scores.len() {
        return Err(Error::shape("nms", boxes.len(), scores.len()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("NMS score {s}")));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| rank_order(scores[i], &boxes[i], scores[j], &boxes[j]).then(i.cmp(&j)));

    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold) {
            keep.push(i);
        }
    }
    Ok(keep)
}

/// Greedy per-class NMS. Only detections sharing a label suppress each
/// other. Output is in descending score order across all classes.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    check_threshold(iou_threshold)?;
    let mut kept: Vec<usize> = Vec::new();
    let mut labels: Vec<_> = dets.iter().map(|d| d.label).collect();
    labels.sort();
    labels.dedup();
    for label in labels {
        let members: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].label == label).collect();
        let boxes: Vec<BBox> = members.iter().map(|&i| dets[i].bbox).collect();
        let scores: Vec<f64> = members.iter().map(|&i| dets[i].score).collect();
        kept.extend(nms_indices(&boxes, &scores, iou_threshold)?.into_iter().map(|k| members[k]));
    }
    kept.sort_by(|&i, &j| {
        rank_order(dets[i].score, &dets[i].bbox, dets[j].score, &dets[j].bbox)
            .then(dets[i].label.cmp(&dets[j].label))
            .then(i.cmp(&j))
    });
    Ok(kept.into_iter().map(|i| dets[i]).collect())
}
