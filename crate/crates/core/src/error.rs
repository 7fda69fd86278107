use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("tensor dimensions must be >= 1, got {0:?}")]
    ZeroDimension(Vec<usize>),
    #[error("input of length {len} too short for valid convolution spanning {span} frames")]
    InputTooShort { len: usize, span: usize },
    #[error("time axis is empty")]
    EmptyTime,
    #[error("concatenated parts disagree on time length: {0} vs {1}")]
    TimeMismatch(usize, usize),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; call zero_grad first")]
    DoubleBackward,
    #[error("{channels} channels not divisible by res2 scale {scale}")]
    ScaleIndivisible { channels: usize, scale: usize },
    #[error("dimension {dim} not divisible by {heads} heads")]
    HeadIndivisible { dim: usize, heads: usize },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("checkpoint config differs from the requested config: {0}")]
    ConfigMismatch(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("clip is entirely silent")]
    AllSilent,
    #[error("clip has {len} samples, fewer than one {frame}-sample frame")]
    TooShort { len: usize, frame: usize },
    #[error("corrupt feature cache file: {0}")]
    CorruptCache(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class '{class}' has {count} samples; at least 5 are needed for an 8:2 split")]
    EmptyClass { class: String, count: usize },
    #[error("unknown label '{0}'")]
    UnknownLabel(String),
    #[error("loss became non-finite at epoch {epoch}, step {step} (loss = {loss})")]
    NaNLoss { epoch: usize, step: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
