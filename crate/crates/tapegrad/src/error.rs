use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),
    /// The operation was asked to do something structurally impossible
    /// (non-integer conv output size, unwatched gradient query, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Input values outside the operation's numeric domain.
    #[error("domain error: {0}")]
    Domain(String),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
