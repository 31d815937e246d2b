//! Row softmax and layer normalization, the two pointwise-ish kernels every
//! attention and block computation shares.

use crate::batch::TokenBatch;
use crate::error::{CoreError, CoreResult};
use crate::matrix::Matrix;

/// Row sums below this fall back to a uniform row. Unreachable after
/// max-subtraction of finite inputs (the max exponential is 1), kept as a
/// defensive floor.
const SOFTMAX_SUM_FLOOR: f64 = 1e-12;

/// Softmax over each row, with per-row max subtraction so large logits
/// cannot overflow.
pub fn softmax_rows(m: &Matrix) -> CoreResult<Matrix> {
    m.validate_finite("softmax_rows input")?;
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_slice(out.row_mut(r));
    }
    Ok(out)
}

/// In-place softmax of one logit row.
pub fn softmax_slice(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    if sum < SOFTMAX_SUM_FLOOR {
        let uniform = 1.0 / row.len() as f64;
        row.fill(uniform);
        return;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

fn check_layer_norm_args(dim: usize, gamma: &[f64], beta: &[f64], eps: f64) -> CoreResult<()> {
    if gamma.len() != dim || beta.len() != dim {
        return Err(CoreError::ShapeMismatch {
            op: "layer_norm",
            detail: format!("dim {dim}, gamma {}, beta {}", gamma.len(), beta.len()),
        });
    }
    if !(eps > 0.0) {
        return Err(CoreError::InvalidArgument {
            op: "layer_norm",
            detail: format!("eps must be positive, got {eps}"),
        });
    }
    Ok(())
}

/// Normalizes one token in place: `gamma * (x - mean) / sqrt(var + eps) + beta`
/// with biased variance over the channels.
pub fn layer_norm_slice(x: &mut [f64], gamma: &[f64], beta: &[f64], eps: f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + eps).sqrt();
    for ((v, g), b) in x.iter_mut().zip(gamma).zip(beta) {
        *v = g * (*v - mean) * inv_std + b;
    }
}

/// Per-token layer normalization of a whole batch.
pub fn layer_norm(x: &TokenBatch, gamma: &[f64], beta: &[f64], eps: f64) -> CoreResult<TokenBatch> {
    check_layer_norm_args(x.dim(), gamma, beta, eps)?;
    x.validate_finite("layer_norm input")?;
    let mut out = x.clone();
    let dim = out.dim();
    for token in out.data_mut().chunks_mut(dim) {
        layer_norm_slice(token, gamma, beta, eps);
    }
    Ok(out)
}

/// Layer normalization of each row of a `T x d` matrix.
pub fn layer_norm_rows(x: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> CoreResult<Matrix> {
    check_layer_norm_args(x.cols(), gamma, beta, eps)?;
    x.validate_finite("layer_norm input")?;
    let mut out = x.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        layer_norm_slice(row, gamma, beta, eps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn equal_logits_give_uniform_rows() {
        let m = Matrix::zeros(2, 2);
        let p = softmax_rows(&m).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn ln2_row_splits_two_to_one() {
        let m = Matrix::new(1, 2, vec![2.0_f64.ln(), 0.0]).unwrap();
        let p = softmax_rows(&m).unwrap();
        assert_close(p.get(0, 0), 2.0 / 3.0, 1e-15);
        assert_close(p.get(0, 1), 1.0 / 3.0, 1e-15);
    }

    #[test]
    fn huge_equal_logits_survive_the_overflow_guard() {
        let m = Matrix::new(1, 3, vec![1000.0; 3]).unwrap();
        let p = softmax_rows(&m).unwrap();
        for c in 0..3 {
            assert_close(p.get(0, c), 1.0 / 3.0, 1e-15);
        }
    }

    #[test]
    fn shift_invariance() {
        let logits = vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.5];
        let base = Matrix::new(2, 3, logits.clone()).unwrap();
        let shifted =
            Matrix::new(2, 3, logits.iter().map(|v| v + 123.0).collect()).unwrap();
        let a = softmax_rows(&base).unwrap();
        let b = softmax_rows(&shifted).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_close(*x, *y, 1e-12);
        }
    }

    #[test]
    fn non_finite_logits_are_an_error() {
        let mut m = Matrix::zeros(1, 2);
        m.data_mut()[0] = f64::INFINITY;
        assert!(matches!(softmax_rows(&m), Err(CoreError::NonFinite { .. })));
    }

    #[test]
    fn constant_token_maps_to_beta() {
        let x = TokenBatch::new(1, 1, 3, vec![4.0, 4.0, 4.0]).unwrap();
        let y = layer_norm(&x, &[1.0; 3], &[0.0; 3], 1e-6).unwrap();
        for v in y.data() {
            assert_close(*v, 0.0, 1e-9);
        }
        let y = layer_norm(&x, &[1.0; 3], &[0.5; 3], 1e-6).unwrap();
        for v in y.data() {
            assert_close(*v, 0.5, 1e-9);
        }
    }

    #[test]
    fn already_normalized_token_is_fixed() {
        // [1, -1] has zero mean and unit biased variance; with tiny eps it is
        // (nearly) a fixed point, and its norm is sqrt(d).
        let x = TokenBatch::new(1, 1, 2, vec![1.0, -1.0]).unwrap();
        let y = layer_norm(&x, &[1.0; 2], &[0.0; 2], 1e-15).unwrap();
        assert_close(y.data()[0], 1.0, 1e-9);
        assert_close(y.data()[1], -1.0, 1e-9);
        let norm = (y.data()[0].powi(2) + y.data()[1].powi(2)).sqrt();
        assert_close(norm, 2.0_f64.sqrt(), 1e-9);
    }

    #[test]
    fn normalized_moments_match_direct_recomputation() {
        let d = 16;
        let data: Vec<f64> = (0..d).map(|i| (i as f64 * 0.7).sin() * 3.0 + 1.0).collect();
        let x = TokenBatch::new(1, 1, d, data).unwrap();
        let y = layer_norm(&x, &vec![1.0; d], &vec![0.0; d], 1e-10).unwrap();
        let mean = y.data().iter().sum::<f64>() / d as f64;
        let var = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        assert_close(mean, 0.0, 1e-10);
        assert_close(var, 1.0, 1e-6);
    }

    #[test]
    fn gamma_beta_length_mismatch_is_rejected() {
        let x = TokenBatch::zeros(1, 1, 3);
        assert!(layer_norm(&x, &[1.0; 2], &[0.0; 3], 1e-6).is_err());
        assert!(layer_norm(&x, &[1.0; 3], &[0.0; 3], 0.0).is_err());
    }
}
