use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("footage of trial {trial_id} covers {available:?} s but the periods need {needed:?} s")]
    FootageTooShort { trial_id: String, needed: (f64, f64), available: (f64, f64) },

    #[error("frame extraction failed for trial {trial_id}, frame {index}: {reason}")]
    FrameExtraction { trial_id: String, index: usize, reason: String },

    #[error("invalid trial {trial_id}: {reason}")]
    InvalidTrial { trial_id: String, reason: String },

    #[error("invalid cue schedule: {0}")]
    InvalidSchedule(String),

    #[error("insufficient trials: label {label} has {count}, need at least {needed}")]
    InsufficientTrials { label: String, count: usize, needed: usize },

    #[error("resampling needs both labels present")]
    SingleLabel,

    #[error("unsupported frame count {0} (expected 16, 8 or 2)")]
    UnsupportedFrames(usize),

    #[error("unsupported input shape {got:?}, expected {expected}")]
    UnsupportedShape { expected: String, got: Vec<usize> },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("layer `{0}` has no spatial extent")]
    NoSpatialExtent(String),

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("weights are missing backbone tensors: {0:?}")]
    MissingTensors(Vec<String>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("wrong frame count: expected {expected}, got {got}")]
    WrongFrameCount { expected: usize, got: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("resource error: {0}")]
    Resource(String),

    #[error("perturbation `{perturbation}` cannot be paired with this model: {reason}")]
    MismatchedPairing { perturbation: String, reason: String },

    #[error("missing aggregates in {0}")]
    MissingAggregates(PathBuf),

    #[error("interrupted")]
    Interrupted,

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Stats(#[from] foresight_stats::StatsError),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| CoreError::Io { path: path.into(), source })
    }
}
