use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grammar violation at a byte offset of the parsed text.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("parse error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl ParseError {
    pub fn new(pos: usize, msg: impl Into<String>) -> Self {
        Self { pos, msg: msg.into() }
    }

    pub(crate) fn shifted(mut self, by: usize) -> Self {
        self.pos += by;
        self
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("template slot `{0}` is not filled")]
    MissingSlot(String),

    #[error("template references unknown slot `{0}`")]
    UnknownSlot(String),

    #[error("malformed template: {0}")]
    Template(String),

    #[error("label kinds differ: {0} vs {1}")]
    KindMismatch(String, String),

    #[error("mask has no foreground pixel")]
    EmptyMask,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("annotation client: {0}")]
    Client(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl DatasetError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Parse(_) => "parse",
            Self::MissingSlot(_) | Self::UnknownSlot(_) | Self::Template(_) => "template",
            Self::KindMismatch(..) => "kind_mismatch",
            Self::EmptyMask => "empty_mask",
            Self::Invalid(_) => "invalid",
            Self::Client(_) => "client",
            Self::Io { .. } => "io",
            Self::Json(_) => "json",
        }
    }
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;
