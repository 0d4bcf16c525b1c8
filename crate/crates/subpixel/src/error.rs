use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid raster header: {0}")]
    Header(String),

    #[error("header/data size mismatch: header declares {expected} bytes, file holds {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("non-finite value at cell {index} outside the nodata mask")]
    NonFiniteValue { index: usize },

    #[error("invalid label code {code} at cell {index}")]
    InvalidLabel { code: u8, index: usize },

    #[error("grid dimensions mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular input: {0}")]
    SingularInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("artifact decode error: {0}")]
    Artifact(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
