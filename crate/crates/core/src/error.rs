use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("layer state error: {0}")]
    State(String),

    #[error("non-finite value detected: {0}")]
    NonFinite(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed annotation XML in {file}: {reason}")]
    VocMalformed { file: PathBuf, reason: String },

    #[error("box outside image in {file}: {reason}")]
    VocBoxOutOfImage { file: PathBuf, reason: String },

    #[error("unknown label {label:?} in {file}")]
    VocUnknownLabel { file: PathBuf, label: String },

    #[error("invalid box in {file}: {reason}")]
    VocInvalidBox { file: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
