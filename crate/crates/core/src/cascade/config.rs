use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, ClassLabel, PatchConfig, SplitRatio};
use crate::geometry::MatchCriterion;
use crate::losses::LossConfig;
use crate::nn::{LrSchedule, SgdConfig};
use crate::{Error, Result};

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionTrainConfig {
    pub epochs: usize,
    pub frames_per_step: usize,
    pub sgd: SgdConfig,
    pub lr_schedule: LrSchedule,
    pub loss: LossConfig,
    /// Anchors sampled per frame for the proposal loss.
    pub rpn_batch: usize,
    pub rpn_positive_fraction: f64,
    /// An anchor is foreground at or above this IoU with some object.
    pub rpn_positive_iou: f64,
    /// and background below this one. The best anchor of every object is
    /// foreground regardless.
    pub rpn_negative_iou: f64,
    /// RoIs sampled per frame for the head loss.
    pub roi_batch: usize,
    pub roi_foreground_fraction: f64,
    pub roi_foreground_iou: f64,
    /// Proposals kept per frame as head training RoIs (ground truth is
    /// always added).
    pub train_proposals: usize,
    pub augment: AugmentConfig,
    /// Rule for counting overlapping validation proposals per epoch.
    pub criterion: MatchCriterion,
    pub seed: u64,
}

impl Default for DetectionTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            frames_per_step: 4,
            sgd: SgdConfig { learning_rate: 0.02, ..SgdConfig::default() },
            lr_schedule: LrSchedule::Cosine { floor: 0.0 },
            loss: LossConfig::default(),
            rpn_batch: 64,
            rpn_positive_fraction: 0.5,
            rpn_positive_iou: 0.6,
            rpn_negative_iou: 0.3,
            roi_batch: 16,
            roi_foreground_fraction: 0.25,
            roi_foreground_iou: 0.5,
            train_proposals: 32,
            augment: AugmentConfig::all(),
            criterion: MatchCriterion::default(),
            seed: 42,
        }
    }
}

impl DetectionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.frames_per_step == 0 || self.rpn_batch == 0 || self.roi_batch == 0 {
            return Err(Error::Config(
                "epochs, frames_per_step, rpn_batch and roi_batch must be >= 1".into(),
            ));
        }
        for (n, v) in [
            ("rpn_positive_fraction", self.rpn_positive_fraction),
            ("rpn_positive_iou", self.rpn_positive_iou),
            ("rpn_negative_iou", self.rpn_negative_iou),
            ("roi_foreground_fraction", self.roi_foreground_fraction),
            ("roi_foreground_iou", self.roi_foreground_iou),
        ] {
            check_unit(n, v)?;
        }
        if self.rpn_negative_iou > self.rpn_positive_iou {
            return Err(Error::Config("rpn_negative_iou exceeds rpn_positive_iou".into()));
        }
        self.criterion.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecognitionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub lr_schedule: LrSchedule,
    /// `(gamma, alpha)` of the focal term; plain cross-entropy when absent.
    pub focal: Option<(f64, f64)>,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for RecognitionTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            sgd: SgdConfig::default(),
            lr_schedule: LrSchedule::Cosine { floor: 0.0 },
            focal: Some((2.0, 1.0)),
            augment: AugmentConfig::all(),
            seed: 42,
        }
    }
}

impl RecognitionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Inference settings shared by the detection-only and cascade pipelines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    /// Minimum class probability for a head candidate.
    pub score_threshold: f64,
    /// IoU of the single per-class suppression pass.
    pub terminal_nms_iou: f64,
    /// Labels whose candidates are removed after relabelling.
    pub drop_labels: Vec<ClassLabel>,
    pub patches: PatchConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.5,
            terminal_nms_iou: 0.3,
            drop_labels: vec![ClassLabel::Bubble, ClassLabel::Residues, ClassLabel::Normal],
            patches: PatchConfig::default(),
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("score_threshold", self.score_threshold)?;
        check_unit("terminal_nms_iou", self.terminal_nms_iou)
    }
}

/// Everything the two training stages and inference need, apart from the
/// network shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub detection: DetectionTrainConfig,
    pub recognition: RecognitionTrainConfig,
    pub inference: InferConfig,
    pub detection_split: SplitRatio,
    pub recognition_split: SplitRatio,
    /// Rule for proposal-level evaluation.
    pub criterion: MatchCriterion,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            detection: DetectionTrainConfig::default(),
            recognition: RecognitionTrainConfig::default(),
            inference: InferConfig::default(),
            detection_split: SplitRatio::DETECTION,
            recognition_split: SplitRatio::RECOGNITION,
            criterion: MatchCriterion::default(),
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        self.recognition.validate()?;
        self.inference.validate()?;
        self.detection_split.validate()?;
        self.recognition_split.validate()?;
        self.criterion.validate()
    }
}
