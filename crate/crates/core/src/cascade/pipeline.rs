use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::CascadeConfig;
use super::infer::{infer_sequence, IdentityRecognizer, NetRecognizer, Recognizer, SequenceResult};
use super::train_detect::{train_detection, TrainingTrace};
use super::train_recog::{train_recognition, RecognitionTrace};
use crate::data::{
    build_recognition_set, generate_dataset, split_detection, split_recognition, AnnotatedFrame, PatientLabel,
    PatientSequence, RecognitionSample, SynthConfig,
};
use crate::eval::{
    image_level_cm, patient_level_cm, roc_over_iou, rpn_level_cm, threshold_sweep, ConfusionMatrix, EvalLevel,
    FrameDetections, FrameProposals, FrameTruth, RocCurve, StageMetrics,
};
use crate::models::{Detector, DetectorConfig, RecognitionConfig};
use crate::nn::TransferReport;
use crate::seed::stream_rng;
use crate::{Error, Result};

/// Holds out `per_category` patients of every label for testing, chosen by
/// a seeded shuffle. Both halves keep the input order.
pub fn split_patients(
    patients: Vec<PatientSequence>,
    per_category: usize,
    seed: u64,
) -> Result<(Vec<PatientSequence>, Vec<PatientSequence>)> {
    let mut test_ids = Vec::new();
    for (c, label) in PatientLabel::ALL.into_iter().enumerate() {
        let mut ids: Vec<&str> = patients.iter().filter(|p| p.label == label).map(|p| p.patient_id.as_str()).collect();
        if ids.len() <= per_category && per_category > 0 {
            return Err(Error::Config(format!(
                "{} {} patients cannot spare {per_category} for testing",
                ids.len(),
                label.name()
            )));
        }
        ids.shuffle(&mut stream_rng(seed, &[0xF0, c as u64]));
        test_ids.extend(ids[..per_category].iter().map(|s| s.to_string()));
    }
    Ok(patients.into_iter().partition(|p| !test_ids.contains(&p.patient_id)))
}

pub fn flatten_frames(patients: &[PatientSequence]) -> Vec<AnnotatedFrame> {
    patients.iter().flat_map(|p| p.frames.iter().cloned()).collect()
}

/// Recognition patches from the detection training frames, split by class.
pub fn recognition_sets(
    frames: &[AnnotatedFrame],
    cfg: &CascadeConfig,
    seed: u64,
) -> Result<(Vec<RecognitionSample>, Vec<RecognitionSample>)> {
    let samples = build_recognition_set(frames, &cfg.inference.patches, seed)?;
    split_recognition(samples, cfg.recognition_split, seed)
}

/// Confusion matrices of one pipeline stage at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEvaluation {
    pub rpn: ConfusionMatrix,
    pub image: ConfusionMatrix,
    pub patient: ConfusionMatrix,
}

impl StageEvaluation {
    pub fn to_stage_metrics(&self, stage: &str) -> StageMetrics {
        StageMetrics::new(stage)
            .with(EvalLevel::Rpn, self.rpn)
            .with(EvalLevel::Image, self.image)
            .with(EvalLevel::Patient, self.patient)
    }
}

pub fn frame_truths(patients: &[PatientSequence]) -> Vec<FrameTruth> {
    patients.iter().flat_map(|p| p.frames.iter().map(FrameTruth::from)).collect()
}

pub fn evaluate_sequences(
    results: &[SequenceResult],
    patients: &[PatientSequence],
    cfg: &CascadeConfig,
) -> Result<StageEvaluation> {
    let truth = frame_truths(patients);
    let dets: Vec<FrameDetections> = results.iter().flat_map(|s| s.frames.iter().map(|f| f.to_detections())).collect();
    let props: Vec<FrameProposals> = results.iter().flat_map(|s| s.frames.iter().map(|f| f.to_proposals())).collect();
    let verdicts: Vec<_> = results.iter().map(SequenceResult::verdict).collect();
    let labels: Vec<(String, PatientLabel)> = patients.iter().map(|p| (p.patient_id.clone(), p.label)).collect();
    Ok(StageEvaluation {
        rpn: rpn_level_cm(&props, &truth, &cfg.criterion)?,
        image: image_level_cm(&dets, &truth)?,
        patient: patient_level_cm(&verdicts, &labels)?,
    })
}

pub fn run_sequences<R: Recognizer + Clone + Send + Sync>(
    detector: &Detector,
    recognizer: Option<&R>,
    patients: &[PatientSequence],
    cfg: &CascadeConfig,
) -> Result<Vec<SequenceResult>> {
    patients.iter().map(|p| infer_sequence(detector, recognizer, p, &cfg.inference)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub detector: DetectorConfig,
    pub recognizer: RecognitionConfig,
    pub cascade: CascadeConfig,
    pub test_patients_per_category: usize,
    pub roc_thresholds: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            detector: DetectorConfig::default(),
            recognizer: RecognitionConfig::default(),
            cascade: CascadeConfig::default(),
            test_patients_per_category: 2,
            roc_thresholds: 21,
        }
    }
}

impl BenchmarkConfig {
    /// Checks every part and that the parts agree with each other.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.detector.validate()?;
        self.recognizer.validate()?;
        self.cascade.validate()?;
        let side = self.synth.image_size;
        if self.detector.backbone.input_size != (side, side) {
            return Err(Error::Config(format!(
                "detector input {:?} differs from generated image size {side}",
                self.detector.backbone.input_size
            )));
        }
        if self.recognizer.patch_size != self.cascade.inference.patches.patch_size as usize {
            return Err(Error::Config(format!(
                "recognition input {} differs from patch size {}",
                self.recognizer.patch_size, self.cascade.inference.patches.patch_size
            )));
        }
        if self.roc_thresholds < 2 {
            return Err(Error::Config("roc_thresholds must be at least 2".into()));
        }
        Ok(())
    }

    /// Every seed in the configuration replaced by `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.cascade.detection.seed = seed;
        self.cascade.recognition.seed = seed;
        self
    }
}

pub struct BenchmarkResult {
    pub detection_only: StageEvaluation,
    pub cascade: StageEvaluation,
    pub roc: RocCurve,
    pub detection_trace: TrainingTrace,
    pub recognition_trace: RecognitionTrace,
    pub transfer: Option<TransferReport>,
    pub detection_results: Vec<SequenceResult>,
    pub cascade_results: Vec<SequenceResult>,
    pub seconds: f64,
}

/// Generate, split, train both stages, then evaluate the detection-only and
/// cascade pipelines on the held-out patients.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    let start = Instant::now();
    cfg.validate()?;
    let patients = generate_dataset(&cfg.synth)?;
    let seed = cfg.synth.seed;
    let (train_patients, test_patients) = split_patients(patients, cfg.test_patients_per_category, seed)?;
    let (train, val) = split_detection(flatten_frames(&train_patients), cfg.cascade.detection_split, seed)?;
    info!("detection split: {} train, {} val frames", train.len(), val.len());
    let det = train_detection(&cfg.detector, &train, &val, &cfg.cascade.detection)?;

    let (rec_train, rec_val) = recognition_sets(&train, &cfg.cascade, seed)?;
    info!("recognition split: {} train, {} val patches", rec_train.len(), rec_val.len());
    let rec = train_recognition(&cfg.recognizer, &rec_train, &rec_val, &cfg.cascade.recognition, Some(&det.checkpoint))?;
    let recognizer = NetRecognizer::new(rec.net, cfg.cascade.inference.patches.clone())?;

    let detection_results = run_sequences::<IdentityRecognizer>(&det.detector, None, &test_patients, &cfg.cascade)?;
    let cascade_results = run_sequences(&det.detector, Some(&recognizer), &test_patients, &cfg.cascade)?;
    let detection_only = evaluate_sequences(&detection_results, &test_patients, &cfg.cascade)?;
    let cascade = evaluate_sequences(&cascade_results, &test_patients, &cfg.cascade)?;
    let props: Vec<FrameProposals> =
        detection_results.iter().flat_map(|s| s.frames.iter().map(|f| f.to_proposals())).collect();
    let roc = roc_over_iou(&props, &frame_truths(&test_patients), &cfg.cascade.criterion, &threshold_sweep(cfg.roc_thresholds))?;
    Ok(BenchmarkResult {
        detection_only,
        cascade,
        roc,
        detection_trace: det.trace,
        recognition_trace: rec.trace,
        transfer: rec.transfer,
        detection_results,
        cascade_results,
        seconds: start.elapsed().as_secs_f64(),
    })
}
