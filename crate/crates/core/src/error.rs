use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer} ({kind}): expected input shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        kind: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("label {label} outside vocabulary of {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(
        "backprojection failed to restore the confidence constraint within {budget} steps \
         (iteration {iteration})"
    )]
    BackprojectionFailed {
        budget: usize,
        iteration: usize,
        trace: Vec<crate::landmark::TraceEntry>,
    },
    #[error("class {class} has {count} examples, fewer than k = {k}")]
    TooFewExamples {
        class: String,
        count: usize,
        k: usize,
    },
    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error(transparent)]
    Manifest(#[from] crate::manifest::ManifestError),
    #[error("pgm {path}: {reason}")]
    Pgm { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
