use std::collections::BTreeMap;
use std::time::Instant;

use image::RgbImage;
use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::RecognitionTrainConfig;
use crate::data::{augment_image, images_to_tensor, ClassLabel, RecognitionSample};
use crate::losses::recognition_loss;
use crate::models::{RecognitionConfig, RecognitionNet};
use crate::nn::{softmax_rows, Checkpoint, Parameterized, Sgd, TransferReport};
use crate::seed::stream_rng;
use crate::{Error, Result};

const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionEpoch {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecognitionTrace {
    pub records: Vec<RecognitionEpoch>,
    pub best_epoch: Option<usize>,
}

pub struct RecognitionRun {
    /// Network holding the best epoch's weights.
    pub net: RecognitionNet,
    pub checkpoint: Checkpoint,
    pub trace: RecognitionTrace,
    /// `None` when training started from random weights.
    pub transfer: Option<TransferReport>,
}

/// Most probable class and its probability for each patch.
pub fn classify_patches(net: &mut RecognitionNet, patches: &[&RgbImage]) -> Result<Vec<(ClassLabel, f64)>> {
    let s = net.config.patch_size as u32;
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(EVAL_CHUNK) {
        if let Some(p) = chunk.iter().find(|p| p.dimensions() != (s, s)) {
            return Err(Error::Config(format!("patch {:?} does not match network input {s}x{s}", p.dimensions())));
        }
        let probs = softmax_rows(&net.forward(&images_to_tensor(chunk)?)?)?;
        for i in 0..chunk.len() {
            let row = probs.row(i);
            let (k, &p) = row
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
            out.push((ClassLabel::from_index(k)?, p));
        }
    }
    Ok(out)
}

pub fn recognition_accuracy(net: &mut RecognitionNet, samples: &[RecognitionSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let patches: Vec<&RgbImage> = samples.iter().map(|s| &s.patch).collect();
    let preds = classify_patches(net, &patches)?;
    let hits = preds.iter().zip(samples).filter(|((l, _), s)| *l == s.label).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Stage-two training. With `init_from`, backbone tensors whose names and
/// shapes match are copied from the stage-one checkpoint first.
pub fn train_recognition(
    model: &RecognitionConfig,
    train: &[RecognitionSample],
    val: &[RecognitionSample],
    cfg: &RecognitionTrainConfig,
    init_from: Option<&Checkpoint>,
) -> Result<RecognitionRun> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("recognition training set is empty".into()));
    }
    let mut net = RecognitionNet::new(model.clone(), &mut stream_rng(cfg.seed, &[0xE0]))?;
    let transfer = match init_from {
        Some(ck) => {
            let report = ck.transfer_into(&mut net, "backbone.", "backbone.");
            info!("copied {} backbone tensors from the detection checkpoint", report.copied.len());
            Some(report)
        }
        None => {
            warn!("no detection checkpoint given; recognition network starts from random weights");
            None
        }
    };
    let mut sgd = Sgd::new(cfg.sgd.clone());
    let mut trace = RecognitionTrace::default();
    let mut best: Option<(usize, f64, Checkpoint)> = None;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        sgd.config.learning_rate = cfg.sgd.learning_rate * cfg.lr_schedule.factor(epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, &[0xE1, epoch as u64]));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut rng = stream_rng(cfg.seed, &[0xE2, epoch as u64, step as u64]);
            let patches: Vec<RgbImage> =
                chunk.iter().map(|&i| augment_image(&train[i].patch, cfg.augment.sample(&mut rng))).collect();
            let refs: Vec<&RgbImage> = patches.iter().collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label.index()).collect();
            net.zero_grad();
            let logits = net.forward(&images_to_tensor(&refs)?)?;
            let (loss, grad) = recognition_loss(&logits, &labels, cfg.focal)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("recognition loss {loss}") });
            }
            hits += labels
                .iter()
                .enumerate()
                .filter(|(i, &l)| {
                    let row = logits.row(*i);
                    row.iter().enumerate().all(|(k, v)| k == l || *v < row[l])
                })
                .count();
            loss_sum += loss * chunk.len() as f64;
            net.backward(&grad)?;
            sgd.step(&mut net).map_err(|e| match e {
                Error::NonFinite(reason) => Error::Diverged { epoch, reason },
                other => other,
            })?;
        }
        let val_accuracy = recognition_accuracy(&mut net, if val.is_empty() { train } else { val })?;
        let record = RecognitionEpoch {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "recognition epoch {epoch}: loss {:.4}, train acc {:.3}, val acc {:.3}, {:.1}s",
            record.loss, record.train_accuracy, record.val_accuracy, record.seconds
        );
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            let meta = BTreeMap::from([
                ("stage".to_string(), "recognition".to_string()),
                ("epoch".to_string(), epoch.to_string()),
            ]);
            best = Some((epoch, val_accuracy, Checkpoint::from_model(&net, meta)));
        }
        trace.records.push(record);
    }
    let (epoch, _, checkpoint) = best.expect("at least one epoch");
    trace.best_epoch = Some(epoch);
    checkpoint.load_into(&mut net)?;
    Ok(RecognitionRun { net, checkpoint, trace, transfer })
}
