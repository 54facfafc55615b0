use std::path::PathBuf;

use lesion_cascade::Error as CoreError;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing {what}: {path}")]
    Missing { what: &'static str, path: PathBuf },

    #[error("config conflict: {0}")]
    Conflict(String),

    #[error("invalid config file {path}: {reason}")]
    BadConfig { path: PathBuf, reason: String },

    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

/// Exit status and machine-readable kind for an error chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Internal = 1,
    MissingFile = 3,
    Config = 4,
    Checkpoint = 5,
    InvalidData = 6,
    Diverged = 7,
    ChecksFailed = 8,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ExitKind::Internal => "internal",
            ExitKind::MissingFile => "missing_file",
            ExitKind::Config => "config",
            ExitKind::Checkpoint => "checkpoint_mismatch",
            ExitKind::InvalidData => "invalid_data",
            ExitKind::Diverged => "diverged",
            ExitKind::ChecksFailed => "checks_failed",
        }
    }
}

fn classify_core(e: &CoreError) -> ExitKind {
    match e {
        CoreError::Config(_) => ExitKind::Config,
        CoreError::Checkpoint(_) | CoreError::CheckpointMismatch(_) => ExitKind::Checkpoint,
        CoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ExitKind::MissingFile,
        CoreError::VocMalformed { .. }
        | CoreError::VocBoxOutOfImage { .. }
        | CoreError::VocUnknownLabel { .. }
        | CoreError::VocInvalidBox { .. }
        | CoreError::InvalidBox(_)
        | CoreError::EmptyInput(_)
        | CoreError::Image { .. }
        | CoreError::Json(_)
        | CoreError::Csv(_) => ExitKind::InvalidData,
        CoreError::Diverged { .. } | CoreError::NonFinite(_) => ExitKind::Diverged,
        _ => ExitKind::Internal,
    }
}

pub fn classify(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Missing { .. } => ExitKind::MissingFile,
                CliError::Conflict(_) | CliError::BadConfig { .. } => ExitKind::Config,
                CliError::ChecksFailed { .. } => ExitKind::ChecksFailed,
            };
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return classify_core(e);
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return ExitKind::MissingFile;
            }
        }
    }
    ExitKind::Internal
}

#[derive(Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: u8,
    pub message: String,
    pub causes: Vec<String>,
}

impl ErrorRecord {
    pub fn new(err: &anyhow::Error) -> Self {
        let kind = classify(err);
        Self {
            error: kind.name(),
            exit_code: kind.code(),
            message: err.to_string(),
            causes: err.chain().skip(1).map(|c| c.to_string()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classification_walks_the_chain() {
        let wrapped = Err::<(), _>(CoreError::Config("x".into())).context("outer").unwrap_err();
        assert_eq!(classify(&wrapped), ExitKind::Config);
        let io = anyhow::Error::from(std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(classify(&io), ExitKind::MissingFile);
        assert_eq!(classify(&anyhow::anyhow!("other")), ExitKind::Internal);
        let checks = anyhow::Error::from(CliError::ChecksFailed { failed: 1, total: 8 });
        let rec = ErrorRecord::new(&checks);
        assert_eq!((rec.error, rec.exit_code), ("checks_failed", 8));
    }
}
