use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {dimension} expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        dimension: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {0} out of range (expected 0, 1 or 2)")]
    LabelOutOfRange(usize),

    #[error("image too small: {width}x{height} (need at least {min}x{min})")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("malformed image file {path}: {reason}")]
    MalformedImage { path: PathBuf, reason: String },

    #[error("unsupported bit depth in {path}: {detail}")]
    UnsupportedDepth { path: PathBuf, detail: String },

    #[error("malformed weight file: {0}")]
    MalformedWeights(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("non-finite loss at epoch {epoch}, minibatch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("network has not been trained or loaded from a checkpoint")]
    Untrained,

    #[error("missing artifact {path}: run stage `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        dimension: impl Into<String>,
        expected: usize,
        found: usize,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            dimension: dimension.into(),
            expected,
            found,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
