use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] avcoop_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss {loss} ({detail})")]
    Divergence { step: usize, loss: f64, detail: String },

    #[error("statistics undefined: {0}")]
    Undefined(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(_) => "core",
            Self::Config(_) => "config",
            Self::Divergence { .. } => "divergence",
            Self::Undefined(_) => "undefined",
            Self::Io { .. } => "io",
            Self::CheckFailed(_) => "check_failed",
            Self::Json(_) => "json",
        }
    }
}

/// Machine-readable form printed by the CLI on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
}

impl From<&HarnessError> for ErrorReport {
    fn from(e: &HarnessError) -> Self {
        Self { error: e.kind(), message: e.to_string() }
    }
}
