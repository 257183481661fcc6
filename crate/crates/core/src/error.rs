use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violates an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor shapes are inconsistent with each other or with a config.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration is invalid or does not match stored artifacts.
    #[error("config error: {0}")]
    Config(String),

    /// A forward pass produced NaN or infinite activations.
    #[error("numeric error in layer `{layer}`: non-finite activation")]
    Numeric { layer: String },

    /// An on-disk artifact is malformed.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A pipeline stage failed; wraps the underlying error.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// The innermost non-stage error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for the command-line front end: 2 for configuration
    /// problems, 3 for domain violations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::Domain(_) | Error::Shape(_) | Error::Numeric { .. } => 3,
            _ => 1,
        }
    }
}
