use std::path::PathBuf;

/// Crate-wide error type.
///
/// The split between variants matters to callers: the CLI maps `Io` to its
/// own exit code and everything else to the validation exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs violate a documented precondition.
    #[error("validation: {0}")]
    Validation(String),

    /// A file does not look like the format it was read as (bad magic,
    /// unsupported version, inconsistent header fields).
    #[error("format: {0}")]
    Format(String),

    /// A file ended before its header-declared payload was complete.
    #[error("length: {0}")]
    Length(String),

    /// Training failed to produce a usable model (all runs diverged, etc).
    #[error("training: {0}")]
    Training(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn length(msg: impl Into<String>) -> Self {
        Error::Length(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
