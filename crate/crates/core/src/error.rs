use thiserror::Error;

/// Errors produced by the core pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("duplicate record for ({date}, {symbol}) at line {line}")]
    DuplicateRecord {
        date: String,
        symbol: String,
        line: u64,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("horizon {horizon} must be at least 1 and shorter than the calendar ({days} days)")]
    InvalidHorizon { horizon: usize, days: usize },

    #[error("unknown indicator kind: {0}")]
    UnknownIndicator(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("normal equations are rank deficient; add L2 regularization or drop collinear features")]
    RankDeficient,

    #[error("{context} diverged: loss became non-finite")]
    Divergence { context: String },

    #[error("information coefficient undefined on day {day}: {reason}")]
    UndefinedIc { day: usize, reason: String },

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("missing parameter entry for scale {scale} at day {day}")]
    MissingParamEntry { scale: usize, day: usize },

    #[error("non-finite gradient in parameter {parameter}")]
    NonFiniteGradient { parameter: String },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("prediction days are not aligned with return days: {0}")]
    Misaligned(String),

    #[error("empty prediction set on day {day}")]
    EmptyPredictions { day: usize },

    #[error("model file is invalid: {0}")]
    ModelFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
