//! Deterministic, dependency-light numeric kernels shared by the whole
//! workspace: dense matrices, token batches, a counter-based splittable RNG,
//! row softmax, layer normalization, and a Jacobi thin SVD.
//!
//! Everything here is a pure function of its inputs (including `RngState`,
//! whose draws depend only on `(seed, counter)`), so results are reproducible
//! across runs and thread schedules.

mod batch;
mod error;
mod kernels;
mod matrix;
mod rng;
mod svd;

pub use batch::TokenBatch;
pub use error::{ensure_finite, CoreError, CoreResult};
pub use kernels::{layer_norm, layer_norm_rows, layer_norm_slice, softmax_rows, softmax_slice};
pub use matrix::Matrix;
pub use rng::{trunc_normal_init, RngState};
pub use svd::{thin_svd, ThinSvd};
