use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value violates one of its invariants.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    /// A config file could not be parsed.
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// An argument lies outside the domain of a formula (e.g. a non-positive distance).
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector or matrix dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numerical kernel could not produce a solution.
    #[error("kernel failure: {0}")]
    Kernel(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config { field, reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
