use thiserror::Error;

/// A malformed line in a tag file. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct FormatError {
    pub line: usize,
    pub reason: String,
}

impl FormatError {
    pub(crate) fn new(line: usize, reason: impl Into<String>) -> Self {
        FormatError {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension {0}; only 2 and 4 are supported")]
    UnsupportedDimension(usize),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("non-finite angle")]
    NonFiniteAngle,

    #[error("purity {0} outside [0, 1]")]
    PurityOutOfRange(f64),

    #[error("empty grid")]
    EmptyGrid,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("no counts to estimate from")]
    EmptyData,

    #[error("no measurement recorded at theta={theta}, delta={delta}")]
    MissingSetting { theta: f64, delta: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("record mismatch: {0}")]
    RecordMismatch(String),

    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T> = std::result::Result<T, Error>;
