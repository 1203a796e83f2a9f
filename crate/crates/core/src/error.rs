use thiserror::Error;

pub type Result<T> = std::result::Result<T, AuditError>;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("probability {value} is outside [0, 1]")]
    ProbabilityOutOfRange { value: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("observed bag sum {sum} has zero probability for bag size {k}")]
    ImpossibleOutcome { sum: usize, k: usize },

    #[error("value {value} is not on the grid {{0, 1/{k}, ..., 1}}")]
    OffGrid { value: f64, k: usize },

    #[error("label at index {index} is {value}, expected 0 or 1")]
    NonBinaryLabel { index: usize, value: u8 },

    #[error("prior {value} is degenerate (log-odds undefined)")]
    DegeneratePrior { value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bound precondition violated: {0}")]
    BoundPrecondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("bag assignment does not match data: {0}")]
    BagMismatch(String),

    #[error("only one class present")]
    SingleClass,

    #[error("dataset has no eta column; estimate priors first")]
    MissingEta,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> AuditError {
    AuditError::InvalidParameter(msg.into())
}
