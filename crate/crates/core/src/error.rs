use std::path::PathBuf;

/// Errors produced by the model, losses, metrics and data pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes that cannot be combined by the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration that violates a structural requirement
    /// (e.g. an input side that is not divisible by the downsampling factor).
    #[error("configuration error: {0}")]
    Config(String),

    /// A map with (near) zero spread where a standardized value is needed.
    #[error("degenerate map: {0}")]
    Degenerate(&'static str),

    /// A frame without a single fixated cell.
    #[error("no fixations in frame")]
    NoFixations,

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    Empty(String),

    /// `backward` was called on a tensor holding more than one value.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// NaN or infinity where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Malformed file contents.
    #[error("{}:{line}: {msg}", path.display())]
    Format { path: PathBuf, line: usize, msg: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
