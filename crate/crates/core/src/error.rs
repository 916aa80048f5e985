use std::io;

use thiserror::Error;

pub type Result<T, E = NtfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NtfError {
    // ingestion and tensor construction
    #[error("empty input: no records")]
    EmptyInput,
    #[error("duplicate entry at ({0}, {1}, {2})")]
    DuplicateEntry(usize, usize, usize),
    #[error("unparseable record on line {line}: {reason}")]
    UnparseableRecord { line: usize, reason: String },
    #[error("entry ({i}, {j}, {k}) out of bounds for dims {dims:?}")]
    EntryOutOfBounds {
        i: usize,
        j: usize,
        k: usize,
        dims: (usize, usize, usize),
    },

    // splits
    #[error("invalid split window: {0}")]
    InvalidWindow(String),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("test set is empty after entity filtering")]
    EmptyTest,
    #[error("split fractions out of range: train {train}, validation {validation}")]
    FractionOutOfRange { train: f64, validation: f64 },

    // binary files
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    // numerics
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("batch norm in training mode needs at least one row")]
    EmptyBatchInTraining,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("gradient of `{0}` is not finite")]
    NonFiniteGradient(String),
    #[error("non-finite values during epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: Box<NtfError>,
    },

    // model
    #[error("slot {k} out of range (K = {max})")]
    SlotOutOfRange { k: usize, max: usize },
    #[error("index ({i}, {j}, {k}) out of range for dims {dims:?}")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        k: usize,
        dims: (usize, usize, usize),
    },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    // training and evaluation
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("need {requested} negatives but only {available} unobserved cells exist")]
    InsufficientNegatives { requested: usize, available: usize },
    #[error("no positive labels")]
    NoPositives,
    #[error("scores contain a single class; AUC is undefined")]
    SingleClass,

    // synthetic data
    #[error("density {density} yields fewer than one observed cell")]
    DensityTooLow { density: f64 },

    // cli
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NtfError {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        NtfError::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by the caller's configuration rather than runtime data.
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            NtfError::UnknownParameter(_)
                | NtfError::InvalidValue { .. }
                | NtfError::InvalidConfig(_)
                | NtfError::FractionOutOfRange { .. }
                | NtfError::InvalidWindow(_)
        )
    }
}
