use thiserror::Error;

/// Errors raised by tensor, adapter, model, decoder and objective code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape {shape:?} holds {expected} values, got {actual}")]
    ValueCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step {step} outside [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },

    #[error("mask token extraction failed: missing {missing:?}, duplicated {duplicated:?}")]
    MaskTokens {
        missing: Vec<usize>,
        duplicated: Vec<usize>,
    },

    #[error("loss undefined: {0}")]
    UndefinedLoss(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
