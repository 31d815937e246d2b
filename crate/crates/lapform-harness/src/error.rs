use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the experiment harness.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// The experiment configuration is invalid or internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A data file does not match its expected binary layout.
    #[error("format error in {path} at byte {offset}: {detail}")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    /// The data itself is unusable (bad labels, empty splits, ...).
    #[error("data error: {0}")]
    Data(String),

    /// An I/O failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] lapform_core::CoreError),

    #[error(transparent)]
    Model(#[from] lapform_model::ModelError),

    #[error(transparent)]
    Geometry(#[from] lapform_geometry::GeometryError),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type HarnessResult<T> = Result<T, HarnessError>;
