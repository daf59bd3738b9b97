//! Error type for IO, parsing, and command execution.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ClbError>;

#[derive(Debug, Error)]
pub enum ClbError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] clb_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ClbError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        ClbError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        ClbError::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code: 3 for numeric failures, 2 for everything else
    /// (usage, config, schema, parse, IO).
    pub fn exit_code(&self) -> i32 {
        match self {
            ClbError::Core(clb_core::Error::Divergence(_)) => 3,
            _ => 2,
        }
    }
}
