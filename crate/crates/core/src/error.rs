use std::io;

use thiserror::Error;

/// Errors produced anywhere in the hotspot pipeline.
///
/// The variants are coarse on purpose: the CLI maps each family onto one
/// exit code, so callers mostly care about which family they got.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("validation error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { line: Option<usize>, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("startup error: {0}")]
    Startup(String),

    #[error("transport error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("no replay archive for request {hash} in {dir}")]
    ReplayMiss { hash: String, dir: String },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation {
            line: None,
            message: message.into(),
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
