use lapform_core::CoreError;
use lapform_model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),
}

pub type GeometryResult<T> = Result<T, GeometryError>;
