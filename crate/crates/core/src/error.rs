use thiserror::Error;

/// Errors produced by the library and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Mismatched lengths or feature counts.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A model could not be fitted to the supplied data.
    #[error("fit error: {0}")]
    Fit(String),

    /// Invalid or incomplete run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Unreadable or malformed input data.
    #[error("data error: {0}")]
    Data(String),

    /// A persisted model file that cannot be used.
    #[error("model format error: {0}")]
    Format(String),

    /// A numerical step produced an unusable result.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
