//! Library-wide error type.
//!
//! Everything fallible in this crate returns [`Result`]. Autodiff errors
//! from the underlying engine are wrapped transparently so callers see a
//! single error surface.

/// Errors produced by simulation, datasets, policies, training and analysis.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Error bubbled up from the autodiff engine.
    #[error(transparent)]
    Grad(#[from] tapegrad::Error),

    /// Incompatible shapes or sizes between values that must agree.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Invalid configuration (bad hyperparameter, malformed spec, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A dataset or artifact violates an expected invariant.
    #[error("data error: {0}")]
    Data(String),

    /// Training aborted (non-finite loss, exploded gradients, ...).
    #[error("training failed: {0}")]
    Train(String),

    /// Underlying filesystem error.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file could not be parsed or has the wrong layout.
    #[error("format error: {0}")]
    Format(String),

    /// A named pipeline stage failed; artifacts written before the failure
    /// are left in place.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn train(msg: impl Into<String>) -> Self {
        Error::Train(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn stage(stage: impl Into<String>, source: Error) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(source),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
