//! Detection multi-task loss, focal loss and the recognition loss.
//!
//! The detection objective sums a classification term over the sampled
//! anchors (or RoIs) and a smooth-L1 box term over the positive ones, both
//! divided by the number of sampled entries `N_cls`.

use serde::{Deserialize, Serialize};

use crate::geometry::BoxDelta;
use crate::nn::{softmax_rows, Tensor};
use crate::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassificationLoss {
    CrossEntropy,
    Focal { gamma: f64, alpha: f64 },
}

impl Default for ClassificationLoss {
    fn default() -> Self {
        ClassificationLoss::CrossEntropy
    }
}

impl ClassificationLoss {
    pub fn focal_default() -> Self {
        ClassificationLoss::Focal {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the box term relative to the classification term.
    pub lambda: f64,
    pub classification: ClassificationLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            classification: ClassificationLoss::CrossEntropy,
        }
    }
}

/// Per-component losses of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rpn_cls: f64,
    pub l_rpn_reg: f64,
    pub l_det_cls: f64,
    pub l_det_reg: f64,
    pub l_recognition: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_rpn_cls: f64, l_rpn_reg: f64, l_det_cls: f64, l_det_reg: f64, l_recognition: f64) -> Self {
        Self {
            l_rpn_cls,
            l_rpn_reg,
            l_det_cls,
            l_det_reg,
            l_recognition,
            total: l_rpn_cls + l_rpn_reg + l_det_cls + l_det_reg + l_recognition,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_rpn_cls,
            self.l_rpn_reg,
            self.l_det_cls,
            self.l_det_reg,
            self.l_recognition,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Field-wise mean over several steps.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let s = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown::new(
            s(|l| l.l_rpn_cls),
            s(|l| l.l_rpn_reg),
            s(|l| l.l_det_cls),
            s(|l| l.l_det_reg),
            s(|l| l.l_recognition),
        )
    }
}

fn check_labels(labels: &[usize], classes: usize, rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape("loss labels", rows, labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!("label {l} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = logits.dims2("cross_entropy")?;
    check_labels(labels, k, n)?;
    let probs = softmax_rows(logits)?;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &t) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        grad.data_mut()[i * k + t] -= 1.0;
    }
    grad.scale(1.0 / n as f64);
    Ok((loss / n as f64, grad))
}

fn check_focal(gamma: f64, alpha: f64) -> Result<()> {
    if !(gamma >= 0.0) {
        return Err(Error::Config(format!("focal gamma {gamma} must be >= 0")));
    }
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("focal alpha {alpha} must be > 0")));
    }
    Ok(())
}

/// Mean of `-alpha * (1 - p_t)^gamma * ln(p_t)` over rows of a probability
/// matrix, `p_t` being the probability of the target class.
pub fn focal_loss(probs: &Tensor, targets: &[usize], gamma: f64, alpha: f64) -> Result<f64> {
    check_focal(gamma, alpha)?;
    let (n, k) = probs.dims2("focal_loss")?;
    check_labels(targets, k, n)?;
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = probs.row(i)[t].clamp(PROB_FLOOR, 1.0);
            -alpha * (1.0 - p).powf(gamma) * p.ln()
        })
        .sum();
    Ok(total / n as f64)
}

/// Focal loss on softmax probabilities of `logits`, with its gradient.
pub fn focal_loss_with_logits(
    logits: &Tensor,
    targets: &[usize],
    gamma: f64,
    alpha: f64,
) -> Result<(f64, Tensor)> {
    check_focal(gamma, alpha)?;
    let (n, k) = logits.dims2("focal_loss")?;
    check_labels(targets, k, n)?;
    let probs = softmax_rows(logits)?;
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_p = row[t] - max - row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let p = probs.row(i)[t];
        let q = 1.0 - p;
        total += -alpha * q.powf(gamma) * log_p;
        // dL/dp_t times p_t, the common factor of dL/dz_j = that * (delta_tj - p_j)
        let mut coeff = -alpha * q.powf(gamma);
        if gamma > 0.0 && q > 0.0 {
            coeff += alpha * gamma * q.powf(gamma - 1.0) * p * log_p;
        }
        for j in 0..k {
            let delta = if j == t { 1.0 } else { 0.0 };
            grad.data_mut()[i * k + j] = coeff * (delta - probs.row(i)[j]) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

pub fn classification_loss(
    logits: &Tensor,
    labels: &[usize],
    kind: ClassificationLoss,
) -> Result<(f64, Tensor)> {
    match kind {
        ClassificationLoss::CrossEntropy => softmax_cross_entropy(logits, labels),
        ClassificationLoss::Focal { gamma, alpha } => focal_loss_with_logits(logits, labels, gamma, alpha),
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// One task (RPN or detection head) of the multi-task objective.
pub struct MultiTaskInput<'a> {
    /// `[N_cls, K]` class logits of the sampled entries.
    pub logits: &'a Tensor,
    /// Class targets; 0 is background, anything else enables the box term.
    pub labels: &'a [usize],
    /// `[N_cls, 4]` predicted deltas.
    pub deltas: &'a Tensor,
    /// Target deltas; entries of background rows are ignored.
    pub target_deltas: &'a [BoxDelta],
}

#[derive(Clone, Debug)]
pub struct MultiTaskLoss {
    pub cls: f64,
    pub reg: f64,
    pub grad_logits: Tensor,
    pub grad_deltas: Tensor,
}

pub fn multitask_loss(input: &MultiTaskInput<'_>, config: &LossConfig) -> Result<MultiTaskLoss> {
    let (n, _) = input.logits.dims2("multitask_loss logits")?;
    if n == 0 || input.labels.is_empty() {
        return Err(Error::EmptyInput("no sampled entries for the detection loss".into()));
    }
    input.deltas.expect_shape("multitask_loss deltas", &[n, 4])?;
    if input.target_deltas.len() != n {
        return Err(Error::shape("multitask_loss targets", n, input.target_deltas.len()));
    }
    let (cls, grad_logits) = classification_loss(input.logits, input.labels, config.classification)?;
    let n_cls = n as f64;
    let mut reg = 0.0;
    let mut grad_deltas = Tensor::zeros(&[n, 4]);
    for (i, (&label, target)) in input.labels.iter().zip(input.target_deltas).enumerate() {
        if label == 0 {
            continue;
        }
        let pred = input.deltas.row(i);
        for (j, t) in target.to_array().into_iter().enumerate() {
            let d = pred[j] - t;
            reg += smooth_l1(d);
            grad_deltas.data_mut()[i * 4 + j] = config.lambda * smooth_l1_grad(d) / n_cls;
        }
    }
    Ok(MultiTaskLoss {
        cls,
        reg: config.lambda * reg / n_cls,
        grad_logits,
        grad_deltas,
    })
}

/// Combined region-proposal and detection-head loss.
pub fn rpn_and_detection_loss(
    rpn: &MultiTaskInput<'_>,
    det: Option<&MultiTaskInput<'_>>,
    config: &LossConfig,
) -> Result<(LossBreakdown, MultiTaskLoss, Option<MultiTaskLoss>)> {
    let r = multitask_loss(rpn, config)?;
    let d = det.map(|d| multitask_loss(d, config)).transpose()?;
    let (dc, dr) = d.as_ref().map_or((0.0, 0.0), |d| (d.cls, d.reg));
    let breakdown = LossBreakdown::new(r.cls, r.reg, dc, dr, 0.0);
    if !breakdown.is_finite() {
        return Err(Error::NonFinite(format!("loss {breakdown:?}")));
    }
    Ok((breakdown, r, d))
}

/// Recognition cross-entropy over six classes, optionally focal-weighted.
pub fn recognition_loss(
    logits: &Tensor,
    labels: &[usize],
    focal: Option<(f64, f64)>,
) -> Result<(f64, Tensor)> {
    let (_, k) = logits.dims2("recognition_loss")?;
    if k != crate::data::ClassLabel::COUNT {
        return Err(Error::shape("recognition_loss", "[N, 6]", format!("{:?}", logits.shape())));
    }
    match focal {
        None => softmax_cross_entropy(logits, labels),
        Some((gamma, alpha)) => focal_loss_with_logits(logits, labels, gamma, alpha),
    }
}
