use std::collections::BTreeMap;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::DetectionTrainConfig;
use crate::data::{augment_frame, AnnotatedFrame};
use crate::geometry::{encode, iou, match_proposals, BBox, BoxDelta};
use crate::losses::{multitask_loss, LossBreakdown, MultiTaskInput};
use crate::models::{Detector, DetectorConfig};
use crate::nn::{Checkpoint, Parameterized, Sgd, Tensor};
use crate::seed::stream_rng;
use crate::{Error, Result};

/// Per-epoch training diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean count, over validation frames with objects, of proposals that
    /// pass the match criterion against some object.
    pub mean_overlaps: f64,
    /// Objectness accuracy on the anchors sampled during the epoch.
    pub rpn_accuracy: f64,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Mean loss over the unaugmented training frames before the first
    /// update.
    pub initial_loss: Option<LossBreakdown>,
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Epoch with the most overlapping proposals; ties go to the higher RPN
/// accuracy, then to the earlier epoch.
pub fn best_epoch(records: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in records {
        let better = match best {
            None => true,
            Some(b) => r
                .mean_overlaps
                .total_cmp(&b.mean_overlaps)
                .then(r.rpn_accuracy.total_cmp(&b.rpn_accuracy))
                .is_gt(),
        };
        if better {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

pub struct DetectionRun {
    /// Detector holding the best epoch's weights.
    pub detector: Detector,
    pub checkpoint: Checkpoint,
    pub trace: TrainingTrace,
}

/// Anchor objectness labels: `Some(1)` foreground, `Some(0)` background,
/// `None` ignored, plus the object each foreground anchor regresses to.
pub(crate) fn assign_anchors(
    clipped: &[BBox],
    gts: &[BBox],
    positive_iou: f64,
    negative_iou: f64,
) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut labels = vec![Some(0); clipped.len()];
    let mut matched = vec![0usize; clipped.len()];
    if gts.is_empty() {
        return (labels, matched);
    }
    let ious: Vec<Vec<f64>> = clipped
        .iter()
        .map(|a| gts.iter().map(|g| if a.is_degenerate() { 0.0 } else { iou(a, g) }).collect())
        .collect();
    for (i, row) in ious.iter().enumerate() {
        let (g, &best) = row
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        matched[i] = g;
        labels[i] = if best >= positive_iou {
            Some(1)
        } else if best < negative_iou {
            Some(0)
        } else {
            None
        };
    }
    for g in 0..gts.len() {
        let top = ious.iter().map(|r| r[g]).fold(0.0f64, f64::max);
        if top <= 0.0 {
            continue;
        }
        for (i, row) in ious.iter().enumerate() {
            if row[g] == top {
                labels[i] = Some(1);
                matched[i] = g;
            }
        }
    }
    (labels, matched)
}

/// Up to `batch` indices with at most `fraction` of them drawn from
/// `positives`, the rest from `negatives`. Sorted ascending.
fn sample_balanced<R: Rng + ?Sized>(
    mut positives: Vec<usize>,
    mut negatives: Vec<usize>,
    batch: usize,
    fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    positives.shuffle(rng);
    negatives.shuffle(rng);
    let n_pos = positives.len().min((batch as f64 * fraction).round() as usize);
    let n_neg = negatives.len().min(batch - n_pos);
    let mut out: Vec<usize> = positives[..n_pos].iter().chain(&negatives[..n_neg]).copied().collect();
    out.sort_unstable();
    out
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (_, k) = t.dims2("gather_rows")?;
    let mut data = Vec::with_capacity(rows.len() * k);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::new(vec![rows.len(), k], data)
}

fn scatter_rows(g: &Tensor, rows: &[usize], total: usize) -> Result<Tensor> {
    let (_, k) = g.dims2("scatter_rows")?;
    let mut out = Tensor::zeros(&[total, k]);
    for (i, &r) in rows.iter().enumerate() {
        out.data_mut()[r * k..(r + 1) * k].copy_from_slice(g.row(i));
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub(crate) struct FrameStep {
    pub loss: LossBreakdown,
    pub rpn_correct: usize,
    pub rpn_sampled: usize,
}

/// Forward and backward pass for one frame. Gradients are scaled by
/// `grad_scale` and accumulated into the detector's parameters.
pub(crate) fn frame_step<R: Rng + ?Sized>(
    det: &mut Detector,
    frame: &AnnotatedFrame,
    cfg: &DetectionTrainConfig,
    grad_scale: f64,
    rng: &mut R,
) -> Result<FrameStep> {
    let image = frame.to_tensor();
    det.check_image(&image)?;
    let gts: Vec<BBox> = frame.objects.iter().map(|o| o.bbox).collect();
    let features = det.backbone.forward(&image)?;
    let deepest = features.last().expect("at least one stage").clone();
    let (logits, deltas) = det.rpn.forward(&deepest)?;

    // proposal loss over sampled anchors
    let clipped = det.grid.clipped();
    let (labels, matched) = assign_anchors(&clipped, &gts, cfg.rpn_positive_iou, cfg.rpn_negative_iou);
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(1)).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(0)).collect();
    let rows = sample_balanced(pos, neg, cfg.rpn_batch, cfg.rpn_positive_fraction, rng);
    let row_labels: Vec<usize> = rows.iter().map(|&i| labels[i].expect("sampled rows are labelled")).collect();
    let row_targets: Vec<BoxDelta> = rows
        .iter()
        .zip(&row_labels)
        .map(|(&i, &l)| if l == 1 { encode(&det.grid.anchors[i], &gts[matched[i]]) } else { Ok(BoxDelta::default()) })
        .collect::<Result<_>>()?;
    let sub_logits = gather_rows(&logits, &rows)?;
    let sub_deltas = gather_rows(&deltas, &rows)?;
    let rpn = multitask_loss(
        &MultiTaskInput { logits: &sub_logits, labels: &row_labels, deltas: &sub_deltas, target_deltas: &row_targets },
        &cfg.loss,
    )?;
    let rpn_correct = rows
        .iter()
        .zip(&row_labels)
        .filter(|(&i, &l)| {
            let r = logits.row(i);
            ((r[1] > r[0]) as usize) == l
        })
        .count();

    // head loss over sampled RoIs
    let proposals = crate::models::propose(&logits, &deltas, &det.grid, &det.config.proposals)?;
    let mut rois: Vec<BBox> = proposals.iter().take(cfg.train_proposals).map(|p| p.bbox).collect();
    rois.extend(&gts);
    let gt_pairs = frame.gt_pairs();
    let mode = det.config.head.label_mode;
    let mut roi_class = vec![0usize; rois.len()];
    let mut roi_gt = vec![None; rois.len()];
    for (i, r) in rois.iter().enumerate() {
        let best = gt_pairs
            .iter()
            .enumerate()
            .map(|(g, (b, _))| (g, iou(r, b)))
            .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        if let Some((g, v)) = best {
            if v >= cfg.roi_foreground_iou {
                if let Some(k) = mode.target(gt_pairs[g].1) {
                    roi_class[i] = k;
                    roi_gt[i] = Some(g);
                }
            }
        }
    }
    let fg: Vec<usize> = (0..rois.len()).filter(|&i| roi_class[i] > 0).collect();
    let bg: Vec<usize> = (0..rois.len()).filter(|&i| roi_class[i] == 0).collect();
    let picked = sample_balanced(fg, bg, cfg.roi_batch, cfg.roi_foreground_fraction, rng);
    let picked_rois: Vec<BBox> = picked.iter().map(|&i| rois[i]).collect();
    let picked_labels: Vec<usize> = picked.iter().map(|&i| roi_class[i]).collect();
    let picked_targets: Vec<BoxDelta> = picked
        .iter()
        .map(|&i| match roi_gt[i] {
            Some(g) => encode(&rois[i], &gt_pairs[g].0),
            None => Ok(BoxDelta::default()),
        })
        .collect::<Result<_>>()?;
    let head_stage = det.head_stage();
    let head_out = det.head.forward(&features[head_stage], &picked_rois)?;
    let head = match &head_out {
        Some((cls, reg)) => Some(multitask_loss(
            &MultiTaskInput { logits: cls, labels: &picked_labels, deltas: reg, target_deltas: &picked_targets },
            &cfg.loss,
        )?),
        None => None,
    };

    let breakdown = LossBreakdown::new(
        rpn.cls,
        rpn.reg,
        head.as_ref().map_or(0.0, |h| h.cls),
        head.as_ref().map_or(0.0, |h| h.reg),
        0.0,
    );
    if !breakdown.is_finite() {
        return Err(Error::NonFinite(format!("frame {} loss {breakdown:?}", frame.frame_id)));
    }

    let mut g_logits = scatter_rows(&rpn.grad_logits, &rows, logits.shape()[0])?;
    let mut g_deltas = scatter_rows(&rpn.grad_deltas, &rows, deltas.shape()[0])?;
    g_logits.scale(grad_scale);
    g_deltas.scale(grad_scale);
    let mut stage_grads: Vec<Option<Tensor>> = vec![None; features.len()];
    stage_grads[features.len() - 1] = Some(det.rpn.backward(&g_logits, &g_deltas)?);
    if let Some(mut h) = head {
        h.grad_logits.scale(grad_scale);
        h.grad_deltas.scale(grad_scale);
        let g = det.head.backward(&h.grad_logits, &h.grad_deltas)?;
        match &mut stage_grads[head_stage] {
            Some(acc) => acc.add_assign(&g)?,
            slot => *slot = Some(g),
        }
    }
    det.backbone.backward(stage_grads)?;
    Ok(FrameStep { loss: breakdown, rpn_correct, rpn_sampled: rows.len() })
}

/// Mean number of proposals matching some object, over frames that have
/// objects (over all frames when none do).
pub fn mean_overlaps(det: &mut Detector, frames: &[AnnotatedFrame], cfg: &DetectionTrainConfig) -> Result<f64> {
    let with_objects: Vec<&AnnotatedFrame> = frames.iter().filter(|f| !f.objects.is_empty()).collect();
    if with_objects.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0usize;
    for f in &with_objects {
        let boxes: Vec<BBox> = det.proposals(&f.to_tensor())?.into_iter().map(|p| p.bbox).collect();
        total += match_proposals(&boxes, &f.gt_pairs(), &cfg.criterion)?.matched_count();
    }
    Ok(total as f64 / with_objects.len() as f64)
}

fn train_metadata(stage: &str, epoch: usize) -> BTreeMap<String, String> {
    BTreeMap::from([("stage".to_string(), stage.to_string()), ("epoch".to_string(), epoch.to_string())])
}

/// Stage-one training. The returned detector and checkpoint hold the weights
/// of [`best_epoch`].
pub fn train_detection(
    model: &DetectorConfig,
    train: &[AnnotatedFrame],
    val: &[AnnotatedFrame],
    cfg: &DetectionTrainConfig,
) -> Result<DetectionRun> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("detection training set is empty".into()));
    }
    let mut init_rng = stream_rng(cfg.seed, &[0xD0]);
    let mut det = Detector::new(model.clone(), &mut init_rng)?;
    let mut sgd = Sgd::new(cfg.sgd.clone());
    let mut trace = TrainingTrace::default();
    let mut best: Option<(usize, Checkpoint)> = None;

    let mut initial = Vec::with_capacity(train.len());
    for (idx, frame) in train.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, &[0xD3, idx as u64]);
        initial.push(frame_step(&mut det, frame, cfg, 1.0, &mut rng)?.loss);
    }
    det.zero_grad();
    trace.initial_loss = Some(LossBreakdown::mean(&initial));

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        sgd.config.learning_rate = cfg.sgd.learning_rate * cfg.lr_schedule.factor(epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, &[0xD1, epoch as u64]));
        let mut losses = Vec::with_capacity(train.len());
        let (mut correct, mut sampled) = (0usize, 0usize);
        for (step, chunk) in order.chunks(cfg.frames_per_step).enumerate() {
            det.zero_grad();
            for (j, &idx) in chunk.iter().enumerate() {
                let mut rng = stream_rng(cfg.seed, &[0xD2, epoch as u64, (step * cfg.frames_per_step + j) as u64]);
                let aug = cfg.augment.sample(&mut rng);
                let frame = augment_frame(&train[idx], aug);
                let s = frame_step(&mut det, &frame, cfg, 1.0 / chunk.len() as f64, &mut rng).map_err(|e| match e {
                    Error::NonFinite(reason) => Error::Diverged { epoch, reason },
                    other => other,
                })?;
                correct += s.rpn_correct;
                sampled += s.rpn_sampled;
                losses.push(s.loss);
            }
            sgd.step(&mut det).map_err(|e| match e {
                Error::NonFinite(reason) => Error::Diverged { epoch, reason },
                other => other,
            })?;
        }
        let overlaps = mean_overlaps(&mut det, if val.is_empty() { train } else { val }, cfg)?;
        let record = EpochRecord {
            epoch,
            mean_overlaps: overlaps,
            rpn_accuracy: if sampled > 0 { correct as f64 / sampled as f64 } else { 0.0 },
            loss: LossBreakdown::mean(&losses),
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "detection epoch {epoch}: loss {:.4} (rpn {:.4}/{:.4}, head {:.4}/{:.4}), overlaps {:.3}, rpn acc {:.3}, {:.1}s",
            record.loss.total,
            record.loss.l_rpn_cls,
            record.loss.l_rpn_reg,
            record.loss.l_det_cls,
            record.loss.l_det_reg,
            record.mean_overlaps,
            record.rpn_accuracy,
            record.seconds
        );
        trace.records.push(record);
        if best_epoch(&trace.records) == Some(epoch) {
            best = Some((epoch, Checkpoint::from_model(&det, train_metadata("detection", epoch))));
        }
    }
    let (epoch, checkpoint) = best.expect("at least one epoch");
    trace.best_epoch = Some(epoch);
    if epoch != cfg.epochs {
        info!("restoring detection weights of epoch {epoch}");
    }
    checkpoint.load_into(&mut det)?;
    Ok(DetectionRun { detector: det, checkpoint, trace })
}
