use thiserror::Error;

/// Errors raised by the numeric kernels.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An input contained NaN or an infinity.
    #[error("non-finite value in {context} at flat index {index}")]
    NonFinite { context: &'static str, index: usize },

    /// An argument was outside its documented domain.
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// The Jacobi SVD sweep limit was reached before the off-diagonal
    /// mass fell under the convergence threshold.
    #[error("SVD did not converge after {sweeps} sweeps (residual {residual:.3e})")]
    SvdConvergence { sweeps: usize, residual: f64 },
}

pub type CoreResult<T> = Result<T, CoreError>;

/// Returns an error naming `context` if any entry of `data` is NaN or infinite.
pub fn ensure_finite(context: &'static str, data: &[f64]) -> CoreResult<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(CoreError::NonFinite { context, index }),
        None => Ok(()),
    }
}
