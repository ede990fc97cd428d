use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("value {value} out of range [{lo}, {hi}] for {what}")]
    Range {
        what: &'static str,
        value: i128,
        lo: i128,
        hi: i128,
    },

    #[error("instance validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("insufficient precision: {reason} (required margin {required}, available {available})")]
    InsufficientPrecision {
        reason: String,
        required: String,
        available: String,
    },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("protocol violation at epoch {epoch}, sender {sender}, receiver {receiver}: {reason}")]
    ProtocolViolation {
        epoch: usize,
        sender: i64,
        receiver: i64,
        reason: String,
    },

    #[error("token at position {position} is outside the embedder vocabulary: {reason}")]
    Vocabulary { position: usize, reason: String },

    #[error("decode failed at step {step}: {reason}")]
    Decode { step: usize, reason: String },

    #[error("arithmetic overflow in {0}")]
    Overflow(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed spec: {0}")]
    Spec(String),

    #[error("internal invariant failed: {0}")]
    Invariant(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
