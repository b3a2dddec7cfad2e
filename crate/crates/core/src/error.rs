use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (all jitter steps failed)")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss node is not a scalar: {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),

    #[error("transform is singular or ill-conditioned (condition estimate {0:e})")]
    SingularTransform(f64),
    #[error("loss {loss} cannot be used with model {model}")]
    IncompatibleModelLoss { model: String, loss: String },
    #[error("batch contains no tasks")]
    EmptyBatch,

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric cell at row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("task has {available} samples, {requested} requested")]
    NotEnoughSamples { requested: usize, available: usize },

    #[error("gradient contains non-finite values")]
    NonFiniteGradient,
    #[error("loss diverged at step {step}")]
    DivergedLoss { step: usize },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
