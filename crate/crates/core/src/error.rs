use std::io;

use thiserror::Error;

/// Failure raised by an evaluation backend.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("unknown pass `{0}`")]
    UnknownPass(String),
    #[error("program `{0}` is not known to this backend")]
    UnknownProgram(String),
    #[error("`{tool}` timed out after {seconds}s")]
    Timeout { tool: String, seconds: u64 },
    #[error("`{tool}` exited with status {status}: {stderr}")]
    ToolFailed {
        tool: String,
        status: String,
        stderr: String,
    },
    #[error("could not parse tool output: {0}")]
    Unparsable(String),
    #[error("malformed program payload: {0}")]
    BadProgram(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("cache poisoned for key {key}: stored {stored}, backend returned {fresh}")]
    CachePoisoned { key: String, stored: u64, fresh: u64 },
}

impl BackendError {
    /// Stderr excerpts are capped so error messages stay printable.
    pub fn tool_failed(tool: &str, status: impl ToString, stderr: &[u8]) -> Self {
        let text = String::from_utf8_lossy(stderr);
        let excerpt: String = text.chars().take(400).collect();
        BackendError::ToolFailed {
            tool: tool.to_string(),
            status: status.to_string(),
            stderr: excerpt.trim().to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    ///
    /// 1 usage, 2 backend or external tool, 3 data or knowledge-base corruption.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Backend(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
