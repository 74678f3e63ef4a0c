//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by *who is at fault*, which is what callers (in
/// particular the CLI, which maps them to exit codes) care about:
///
/// - [`Error::Config`] — the requested operation is malformed (bad
///   hyper-parameter, k out of range, unknown key, ...).
/// - [`Error::Input`] — the data handed in is unusable (shape mismatch,
///   non-finite entries, empty dataset, ...).
/// - [`Error::Io`] — a file could not be read, parsed, or written.
/// - [`Error::Numeric`] — a numeric procedure failed at runtime
///   (divergence, degenerate geometry, SVD failure).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("numeric error: {0}")]
    Numeric(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
