//! Single-sequence attention arithmetic: the shared row-stochastic weight
//! matrix P, standard heads (P V), Laplacian heads (V - P V), and the
//! concat-then-project multi-head assembly.

use lapform_core::{softmax_rows, Matrix};

use crate::error::{ModelError, ModelResult};
use crate::head::HeadKind;

/// Smoothing constant inside the query/key row normalization.
pub const QK_NORM_EPS: f64 = 1e-12;

/// Weights of one head. The optional gains are the learnable per-channel
/// scales applied after query/key row normalization; both present iff the
/// model enables qk-norm.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub q_gain: Option<Vec<f64>>,
    pub k_gain: Option<Vec<f64>>,
}

/// One layer's attention weights: `heads` in assignment order plus the
/// shared output projection applied to their concatenation.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    pub w_o: Matrix,
}

/// Scaled dot-product attention weights `P = softmax(Q K^T / sqrt(d_k))` for
/// one sequence; rows of P sum to 1.
pub fn attention_weights(x: &Matrix, w_q: &Matrix, w_k: &Matrix, d_k: usize) -> ModelResult<Matrix> {
    attention_weights_opts(x, w_q, w_k, d_k, None, None)
}

/// As `attention_weights`, with optional qk-norm gains: query and key rows
/// are unit-normalized, then scaled per channel by the gains.
pub fn attention_weights_opts(
    x: &Matrix,
    w_q: &Matrix,
    w_k: &Matrix,
    d_k: usize,
    q_gain: Option<&[f64]>,
    k_gain: Option<&[f64]>,
) -> ModelResult<Matrix> {
    if d_k == 0 {
        return Err(ModelError::Config("d_k must be positive".into()));
    }
    let mut q = x.matmul(w_q)?;
    let mut k = x.matmul(w_k)?;
    if let Some(g) = q_gain {
        normalize_and_gain_rows(&mut q, g);
    }
    if let Some(g) = k_gain {
        normalize_and_gain_rows(&mut k, g);
    }
    let logits = q.matmul_transpose(&k)?.scale(1.0 / (d_k as f64).sqrt());
    Ok(softmax_rows(&logits)?)
}

fn normalize_and_gain_rows(m: &mut Matrix, gain: &[f64]) {
    let cols = m.cols();
    for row in m.data_mut().chunks_mut(cols) {
        let norm = (row.iter().map(|v| v * v).sum::<f64>() + QK_NORM_EPS).sqrt();
        for (v, g) in row.iter_mut().zip(gain) {
            *v = *v / norm * g;
        }
    }
}

/// One head's output for one sequence, `T x d_k`.
pub fn head_forward(kind: HeadKind, x: &Matrix, head: &HeadParams) -> ModelResult<Matrix> {
    let d_k = head.w_q.cols();
    let p = attention_weights_opts(
        x,
        &head.w_q,
        &head.w_k,
        d_k,
        head.q_gain.as_deref(),
        head.k_gain.as_deref(),
    )?;
    let v = x.matmul(&head.w_v)?;
    let pv = p.matmul(&v)?;
    Ok(match kind {
        HeadKind::Standard => pv,
        HeadKind::Laplacian => v.sub(&pv)?,
    })
}

/// Concatenates the per-head outputs in assignment order and applies the
/// output projection, giving the layer's `T x d` attention update.
pub fn mixed_multi_head(
    x: &Matrix,
    layer: &AttentionParams,
    assignment: &[HeadKind],
) -> ModelResult<Matrix> {
    if assignment.len() != layer.heads.len() {
        return Err(ModelError::Config(format!(
            "assignment lists {} heads, layer has {}",
            assignment.len(),
            layer.heads.len()
        )));
    }
    let t = x.rows();
    let total: usize = layer.heads.iter().map(|h| h.w_v.cols()).sum();
    let mut concat = Matrix::zeros(t, total);
    let mut offset = 0;
    for (kind, head) in assignment.iter().zip(&layer.heads) {
        let out = head_forward(*kind, x, head)?;
        let d_k = out.cols();
        for r in 0..t {
            concat.row_mut(r)[offset..offset + d_k].copy_from_slice(out.row(r));
        }
        offset += d_k;
    }
    concat.matmul(&layer.w_o).map_err(Into::into)
}
