use std::path::PathBuf;

/// Error type shared by every module in the crate.
///
/// Variants map onto the CLI exit-code contract: `Numeric` is exit 1,
/// `Io`/`Format` are exit 2, `Config` and `Shape` are exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation was handed tensors whose shapes do not fit together.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric failure at run time (divergence, non-finite loss).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// A file did not match its expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
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
}

pub type Result<T> = std::result::Result<T, Error>;
