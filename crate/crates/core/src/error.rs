use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Array dimensions or layouts that do not fit together.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    /// An input violates the contract of the consuming operation.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A pipeline stage was started before the stage it depends on.
    #[error("{stage} outputs missing: run the `{stage}` stage first ({detail})")]
    MissingPrerequisite { stage: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by invalid user input rather than a failure
    /// while doing work.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::MissingPrerequisite { .. })
    }
}
