//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
///
/// Binary-format problems are split into separate variants (magic, version,
/// truncation, shape, config echo) so callers can map them to distinct exit
/// classes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid wav: {0}")]
    Wav(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad magic bytes (expected {expected:?}, found {found:?})")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid file contents: {0}")]
    Format(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    /// Coarse classification used by the CLI to pick an exit code.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) => ErrorClass::Io,
            Error::Wav(_)
            | Error::Shape(_)
            | Error::BadMagic { .. }
            | Error::BadVersion { .. }
            | Error::Truncated(_)
            | Error::ConfigMismatch(_)
            | Error::Format(_) => ErrorClass::Format,
            Error::Config(_) => ErrorClass::Usage,
            Error::TooShort(_) | Error::Numeric(_) | Error::Degenerate(_) => ErrorClass::Numeric,
        }
    }
}

/// Exit-code classes for the CLI surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Format,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Io => 3,
            ErrorClass::Format => 4,
            ErrorClass::Numeric => 5,
        }
    }
}
