//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),

    #[error("empty row at line {0}")]
    EmptyRow(usize),

    #[error("empty value at line {line}, column {column:?}")]
    EmptyValue { line: usize, column: String },

    #[error("non-finite value {value:?} at line {line}, column {column:?}")]
    NonFinite {
        line: usize,
        column: String,
        value: String,
    },

    #[error("single-class data: label column has only one distinct value {0:?}")]
    SingleClass(String),

    #[error("dataset must have at least 2 rows, found {0}")]
    TooFewRows(usize),

    #[error("dataset has no feature columns")]
    NoFeatures,

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range for {count} instances")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("no candidates remain: every instance is already selected")]
    NoCandidates,

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("k must lie in [1, {n}], got {k}")]
    KOutOfRange { k: usize, n: usize },

    #[error("model file is not a recognized format: {0}")]
    ModelFormat(String),

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    ModelVersion { found: u64, supported: u64 },

    #[error("distance matrix file has a corrupt header: {0}")]
    MatrixFormat(String),

    #[error("unsupported matrix format version {found} (this build reads version {supported})")]
    MatrixVersion { found: u8, supported: u8 },

    #[error("matrix declares n={declared} ({expected} payload bytes) but file holds {actual}")]
    MatrixSizeMismatch {
        declared: usize,
        expected: u64,
        actual: u64,
    },

    #[error("class {class:?} has {count} instances; at least 3 are needed to appear in every split part")]
    ClassTooSmall { class: String, count: usize },

    #[error("prototype set is empty")]
    EmptyPrototypeSet,

    #[error("evaluation set is empty")]
    EmptyEvaluation,

    #[error("confusion matrix has no counted instances")]
    EmptyConfusion,

    #[error("class {0} has no true instances; balanced accuracy is undefined")]
    EmptyClassRow(usize),

    #[error("feature grid is empty after skipping values larger than p")]
    GridExhausted,
}
