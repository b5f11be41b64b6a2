use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("stable rank is undefined for the zero matrix")]
    ZeroMatrix,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("per-sample decay g must be non-negative and finite, got {value} for sample {index}")]
    InvalidDecay { index: usize, value: f64 },

    #[error("dataset has {available} samples but {requested} are required")]
    InsufficientData { available: usize, requested: usize },

    #[error("infeasible batch family: {0}")]
    InfeasibleFamily(String),

    #[error("decay values of samples {i1} and {i2} differ by {gap:e}, too small for a certificate")]
    DegenerateDecayGap { i1: usize, i2: usize, gap: f64 },

    #[error("target {value} of sample {index} is not an integer label in [0, 9]")]
    NonIntegerTarget { index: usize, value: f64 },

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: missing target column `{column}`")]
    MissingTarget { path: PathBuf, column: String },

    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file, expected {expected} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Short machine-readable tag, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyShape { .. } => "empty_shape",
            Error::NonFinite { .. } => "non_finite",
            Error::ZeroMatrix => "zero_matrix",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidDecay { .. } => "invalid_decay",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::InfeasibleFamily(_) => "infeasible_family",
            Error::DegenerateDecayGap { .. } => "degenerate_decay_gap",
            Error::NonIntegerTarget { .. } => "non_integer_target",
            Error::Parse { .. } => "parse",
            Error::MissingTarget { .. } => "missing_target",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
