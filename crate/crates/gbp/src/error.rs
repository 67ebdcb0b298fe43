use std::io;

/// Crate-wide error type. The CLI maps variants onto exit codes: I/O failures
/// exit 2, everything content- or parameter-shaped exits 3 (usage errors are
/// caught by the argument parser before any `Error` is constructed).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Malformed text input (edge lists, feature rows, label files, config files).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Structurally broken binary input: wrong magic, unsupported version, truncation.
    #[error("format error: {0}")]
    Format(String),

    /// Parameter or shape violations (dimension mismatch, bad ranges, phase mismatch).
    #[error("validation error: {0}")]
    Validation(String),
}

impl Error {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code the CLI uses for this error (2 = I/O, 3 = validation).
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
