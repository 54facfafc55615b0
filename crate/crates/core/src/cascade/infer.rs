use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::InferConfig;
use super::train_recog::classify_patches;
use crate::data::{crop_patch, AnnotatedFrame, ClassLabel, PatchConfig, PatientSequence};
use crate::eval::{FrameDetections, FrameProposals, PatientVerdict};
use crate::geometry::{iou, nms, Detection};
use crate::models::{Proposal, RecognitionNet};
use crate::{Error, Result};

/// Second-stage classifier assigning a new label to every candidate.
pub trait Recognizer {
    fn relabel(&mut self, frame: &AnnotatedFrame, candidates: &[Detection]) -> Result<Vec<ClassLabel>>;
}

/// Echoes the detector's labels.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityRecognizer;

impl Recognizer for IdentityRecognizer {
    fn relabel(&mut self, _frame: &AnnotatedFrame, candidates: &[Detection]) -> Result<Vec<ClassLabel>> {
        Ok(candidates.iter().map(|c| c.label).collect())
    }
}

/// Labels each candidate with the class of the annotated object it overlaps
/// best (IoU at least `min_iou`), or `Normal` when there is none.
#[derive(Clone, Copy, Debug)]
pub struct OracleRecognizer {
    pub min_iou: f64,
}

impl Default for OracleRecognizer {
    fn default() -> Self {
        Self { min_iou: 0.3 }
    }
}

impl Recognizer for OracleRecognizer {
    fn relabel(&mut self, frame: &AnnotatedFrame, candidates: &[Detection]) -> Result<Vec<ClassLabel>> {
        Ok(candidates
            .iter()
            .map(|c| {
                frame
                    .objects
                    .iter()
                    .map(|o| (iou(&c.bbox, &o.bbox), o.label))
                    .filter(|(v, _)| *v >= self.min_iou && *v > 0.0)
                    .fold(None, |best: Option<(f64, ClassLabel)>, cur| match best {
                        Some(b) if b.0 >= cur.0 => Some(b),
                        _ => Some(cur),
                    })
                    .map_or(ClassLabel::Normal, |(_, l)| l)
            })
            .collect())
    }
}

/// Crops every candidate from the frame and classifies it with the
/// recognition network.
#[derive(Clone, Debug)]
pub struct NetRecognizer {
    pub net: RecognitionNet,
    pub patches: PatchConfig,
}

impl NetRecognizer {
    pub fn new(net: RecognitionNet, patches: PatchConfig) -> Result<Self> {
        if patches.patch_size as usize != net.config.patch_size {
            return Err(Error::Config(format!(
                "patch size {} differs from recognition input {}",
                patches.patch_size, net.config.patch_size
            )));
        }
        Ok(Self { net, patches })
    }
}

impl Recognizer for NetRecognizer {
    fn relabel(&mut self, frame: &AnnotatedFrame, candidates: &[Detection]) -> Result<Vec<ClassLabel>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let crops: Vec<RgbImage> = candidates
            .iter()
            .map(|c| crop_patch(&frame.image, &c.bbox, self.patches.margin, self.patches.patch_size))
            .collect::<Result<_>>()?;
        let refs: Vec<&RgbImage> = crops.iter().collect();
        Ok(classify_patches(&mut self.net, &refs)?.into_iter().map(|(l, _)| l).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_id: String,
    pub proposals: Vec<Proposal>,
    /// Head candidates above the score threshold, with detector labels.
    pub candidates: Vec<Detection>,
    pub detections: Vec<Detection>,
    /// Times the terminal suppression ran on this frame.
    pub nms_invocations: usize,
}

impl FrameResult {
    pub fn is_positive(&self) -> bool {
        self.detections.iter().any(|d| d.label.is_positive())
    }

    pub fn to_detections(&self) -> FrameDetections {
        FrameDetections { frame_id: self.frame_id.clone(), detections: self.detections.clone() }
    }

    pub fn to_proposals(&self) -> FrameProposals {
        FrameProposals { frame_id: self.frame_id.clone(), boxes: self.proposals.iter().map(|p| p.bbox).collect() }
    }
}

/// Applies `labels` to `candidates`, drops candidates whose new label is in
/// `cfg.drop_labels` and runs the per-class suppression once. Returns the
/// kept detections and the number of suppression passes.
pub fn finalize(candidates: &[Detection], labels: &[ClassLabel], cfg: &InferConfig) -> Result<(Vec<Detection>, usize)> {
    if labels.len() != candidates.len() {
        return Err(Error::shape("finalize", candidates.len(), labels.len()));
    }
    let kept: Vec<Detection> = candidates
        .iter()
        .zip(labels)
        .filter(|(_, l)| !cfg.drop_labels.contains(l))
        .map(|(c, &label)| Detection { label, ..*c })
        .collect();
    Ok((nms(&kept, cfg.terminal_nms_iou)?, 1))
}

/// One frame through the detector and, when given, the recognizer. Without a
/// recognizer the detector labels are kept.
pub fn infer_frame<R: Recognizer + ?Sized>(
    detector: &mut crate::models::Detector,
    recognizer: Option<&mut R>,
    frame: &AnnotatedFrame,
    cfg: &InferConfig,
) -> Result<FrameResult> {
    let out = detector.detect(&frame.to_tensor(), cfg.score_threshold)?;
    let labels = match recognizer {
        Some(r) => r.relabel(frame, &out.candidates)?,
        None => out.candidates.iter().map(|c| c.label).collect(),
    };
    let (detections, nms_invocations) = finalize(&out.candidates, &labels, cfg)?;
    Ok(FrameResult {
        frame_id: frame.frame_id.clone(),
        proposals: out.proposals,
        candidates: out.candidates,
        detections,
        nms_invocations,
    })
}

/// Runs frames concurrently on clones of the models; results come back in
/// frame order.
pub fn infer_frames<R: Recognizer + Clone + Send + Sync>(
    detector: &crate::models::Detector,
    recognizer: Option<&R>,
    frames: &[AnnotatedFrame],
    cfg: &InferConfig,
) -> Result<Vec<FrameResult>> {
    cfg.validate()?;
    frames
        .par_iter()
        .map_init(
            || (detector.clone(), recognizer.cloned()),
            |(d, r), f| infer_frame(d, r.as_mut(), f, cfg),
        )
        .collect()
}

/// Stage-one output only.
pub fn detection_only(
    detector: &crate::models::Detector,
    frames: &[AnnotatedFrame],
    cfg: &InferConfig,
) -> Result<Vec<FrameResult>> {
    infer_frames::<IdentityRecognizer>(detector, None, frames, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub patient_id: String,
    pub frames: Vec<FrameResult>,
    /// Occupant iff some frame has a space-occupying detection.
    pub occupant: bool,
}

impl SequenceResult {
    pub fn verdict(&self) -> PatientVerdict {
        PatientVerdict { patient_id: self.patient_id.clone(), occupant: self.occupant }
    }
}

pub fn sequence_verdict(frames: &[FrameResult]) -> bool {
    frames.iter().any(FrameResult::is_positive)
}

pub fn infer_sequence<R: Recognizer + Clone + Send + Sync>(
    detector: &crate::models::Detector,
    recognizer: Option<&R>,
    patient: &PatientSequence,
    cfg: &InferConfig,
) -> Result<SequenceResult> {
    let frames = infer_frames(detector, recognizer, &patient.frames, cfg)?;
    Ok(SequenceResult {
        patient_id: patient.patient_id.clone(),
        occupant: sequence_verdict(&frames),
        frames,
    })
}
