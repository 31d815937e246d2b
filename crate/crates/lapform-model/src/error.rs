use lapform_core::CoreError;
use thiserror::Error;

/// Errors raised while configuring, differentiating, or training models.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] CoreError),

    /// Structural problem in a model or head configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad labels or inputs.
    #[error("data error: {0}")]
    Data(String),

    /// Operand shapes incompatible on the tape.
    #[error("tape shape error in {op}: {detail}")]
    TapeShape { op: &'static str, detail: String },

    /// Training diverged (non-finite loss) at the given epoch.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed checkpoint or dataset bytes.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Invariant broken inside the engine itself.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type ModelResult<T> = Result<T, ModelError>;
