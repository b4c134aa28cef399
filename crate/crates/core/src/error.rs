use thiserror::Error;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error)]
pub enum NfrError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("layer {index} is not a weighted layer")]
    NotWeighted { index: usize },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("infeasible construction: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported rule for this operation: {0}")]
    UnsupportedRule(String),

    #[error("alignment undefined: {0} has zero norm")]
    UndefinedAlignment(&'static str),

    #[error("KIS undefined: weighted last-layer features have zero L1 norm")]
    UndefinedKis,

    #[error("no nonzero activations at layer {0} to split")]
    EmptySplit(usize),

    #[error("magic mismatch: expected {expected:?}")]
    MagicMismatch { expected: &'static str },

    #[error("truncated payload while reading {0}")]
    Truncated(String),

    #[error("malformed header: {0}")]
    BadHeader(String),

    #[error("image parse error: {0}")]
    Image(String),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, NfrError>;

impl NfrError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        NfrError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
