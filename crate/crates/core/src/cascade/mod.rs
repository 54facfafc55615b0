//! Two-stage training and inference: detector training, weight handoff to
//! the recognition network, recognition training, and joint inference where
//! recognition relabels or drops detector candidates before a single
//! per-class suppression pass.

mod config;
mod infer;
mod pipeline;
mod train_detect;
mod train_recog;

pub use config::{CascadeConfig, DetectionTrainConfig, InferConfig, RecognitionTrainConfig};
pub use infer::{
    detection_only, finalize, infer_frame, infer_frames, infer_sequence, sequence_verdict, FrameResult,
    IdentityRecognizer, NetRecognizer, OracleRecognizer, Recognizer, SequenceResult,
};
pub use pipeline::{
    evaluate_sequences, flatten_frames, frame_truths, recognition_sets, run_benchmark, run_sequences,
    split_patients, BenchmarkConfig, BenchmarkResult, StageEvaluation,
};
pub use train_detect::{best_epoch, mean_overlaps, train_detection, DetectionRun, EpochRecord, TrainingTrace};
pub use train_recog::{
    classify_patches, recognition_accuracy, train_recognition, RecognitionEpoch, RecognitionRun, RecognitionTrace,
};
