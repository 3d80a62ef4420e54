use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error in {path} at row {row}, column {column}: {message}")]
    CsvParse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("zero-variance column at fit time: {0}")]
    ZeroVariance(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss = {loss})")]
    NanLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("empty hyperparameter grid")]
    EmptyGrid,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("relative discrepancy undefined: |prediction| <= 1e-8 at rows {rows:?}")]
    RelativeNearZero { rows: Vec<usize> },

    #[error("cdf inversion did not converge after {iterations} iterations (residual {residual})")]
    BisectionFailed { iterations: usize, residual: f64 },

    #[error("epsilon yields a degenerate training signal: {0}")]
    DegeneratePartition(String),

    #[error("metric undefined: labels contain a single class")]
    SingleClassLabels,

    #[error("calibration set too small: need at least {needed}, have {have}")]
    CalibrationTooSmall { needed: usize, have: usize },

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("unsupported artifact version: expected {expected}, got {got}")]
    VersionMismatch { expected: String, got: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
