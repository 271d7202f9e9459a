use std::path::PathBuf;

use crate::losses::LossReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask is {height}x{width}; stroke masks need at least 32x32")]
    MaskTooSmall { height: usize, width: usize },

    #[error("square of side {size} does not fit a {height}x{width} mask")]
    SquareTooLarge { size: usize, height: usize, width: usize },

    #[error("no mask landed in hole-ratio bucket [{lo}, {hi}] after {attempts} attempts")]
    BucketExhausted { lo: f64, hi: f64, attempts: usize },

    #[error("expected {expected} channel(s), got {got}")]
    ChannelCount { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label schema: {0}")]
    Schema(String),

    #[error("no label row for image `{0}`")]
    MissingLabel(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("non-finite loss term `{term}`")]
    NonFinite {
        term: String,
        report: Option<Box<LossReport>>,
    },

    #[error("{path}: {source}")]
    ImageFile {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn checkpoint(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
