use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SenseError>;

#[derive(Debug, Error)]
pub enum SenseError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("state error: {0}")]
    State(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("non-finite loss or gradient in epoch {epoch}, batch {batch} (utterance {utt_id})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        utt_id: String,
    },
}

impl SenseError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SenseError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        SenseError::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            SenseError::Io { .. } => 3,
            SenseError::NonFinite { .. } => 4,
            _ => 2,
        }
    }
}
