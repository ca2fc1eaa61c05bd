use thiserror::Error;

/// Errors surfaced by the public operations of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("checkpoint error at byte {offset}: {msg}")]
    Checkpoint { offset: u64, msg: String },

    #[error("stage `{0}` has no checkpoint to resume from")]
    MissingStage(String),

    #[error("component `{0}` must be frozen for this operation")]
    NotFrozen(String),

    #[error("model is untrained: {0}")]
    Untrained(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
