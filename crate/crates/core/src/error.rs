use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("type tag error: expected {expected}, found {found}")]
    TypeTag { expected: &'static str, found: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("metadata error: {0}")]
    Meta(String),

    #[error("infeasible decay mask: {0}")]
    Infeasible(String),

    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error("singular path: {0}")]
    SingularPath(String),

    #[error("numeric error: {reason} (after {} recorded iterations)", trace.len())]
    Numeric { reason: String, trace: Vec<f64> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem or by malformed files.
    pub fn is_io_or_format(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format { .. } | Error::TypeTag { .. } | Error::Meta(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
