use thiserror::Error;

/// Errors produced across the flowguard crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frame size mismatch: expected {expected} bytes, got {actual}")]
    FrameSize { expected: usize, actual: usize },

    #[error("truncated frame: stream ended {missing} bytes short of a complete frame")]
    TruncatedFrame { missing: usize },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid architecture at layer {layer}: {reason}")]
    InvalidArchitecture { layer: usize, reason: String },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("truncated dataset: sample {index} incomplete at byte {offset}")]
    TruncatedSample { index: usize, offset: usize },

    #[error("architecture mismatch at layer {layer}: {reason}")]
    ArchMismatch { layer: usize, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
