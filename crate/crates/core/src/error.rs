use thiserror::Error;

pub type Result<T> = std::result::Result<T, CatsError>;

#[derive(Debug, Error)]
pub enum CatsError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("input {index} sits within {window} of the threshold kink (|silu(u)| = {magnitude}, t = {threshold})")]
    NearThreshold {
        index: usize,
        magnitude: f32,
        threshold: f32,
        window: f32,
    },

    #[error("target sparsity {0} outside [0, 1)")]
    InvalidSparsity(f64),

    #[error("activation sample is empty")]
    EmptySample,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unknown layer {layer} (model has {layers} layers)")]
    UnknownLayer { layer: usize, layers: usize },

    #[error("token {token} at position {position} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, position: usize, vocab: usize },

    #[error("sequence of length {len} exceeds max_seq {max_seq}")]
    SequenceTooLong { len: usize, max_seq: usize },

    #[error("missing thresholds: {0}")]
    MissingThresholds(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient memory: need {required} bytes, {available} available")]
    Capacity { required: u64, available: u64 },

    #[error("parse error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CatsError {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        CatsError::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        CatsError::Format {
            offset,
            message: message.into(),
        }
    }
}
