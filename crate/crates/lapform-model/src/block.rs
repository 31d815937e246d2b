//! Pre-LN transformer encoder block: attention and MLP residual branches,
//! each gated per sample by drop path during training.

use lapform_core::{layer_norm_rows, Matrix, RngState, TokenBatch};

use crate::attention::{mixed_multi_head, AttentionParams};
use crate::error::ModelResult;
use crate::head::HeadKind;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNormParams {
    pub fn identity_affine(dim: usize) -> Self {
        Self { gamma: vec![1.0; dim], beta: vec![0.0; dim] }
    }
}

/// Two-layer MLP `d -> r*d -> d` with GELU between.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub fc1_w: Matrix,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Matrix,
    pub fc2_b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub mlp: MlpParams,
    pub drop_path_p: f64,
    /// Diagnostic switch: bypass both LayerNorms entirely (identity), used
    /// by the heat-diffusion equivalence configuration. Normal models leave
    /// this false.
    pub identity_layer_norm: bool,
}

/// GELU, tanh approximation. Chosen over the erf form because its derivative
/// is elementary, keeping finite-difference checks clean.
pub fn gelu(x: f64) -> f64 {
    const A: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const B: f64 = 0.044715;
    0.5 * x * (1.0 + (A * (x + B * x * x * x)).tanh())
}

/// Derivative of the tanh-approximated GELU.
pub fn gelu_grad(x: f64) -> f64 {
    const A: f64 = 0.797_884_560_802_865_4;
    const B: f64 = 0.044715;
    let u = A * (x + B * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * A * (1.0 + 3.0 * B * x * x)
}

/// Per-sample drop-path gates for one residual branch: 0 for dropped
/// samples, `1/(1-p)` for survivors, all-ones when not training or `p = 0`.
pub fn drop_path_mask(batch: usize, p: f64, training: bool, rng: &mut RngState) -> Vec<f64> {
    if !training || p <= 0.0 {
        return vec![1.0; batch];
    }
    let keep_scale = 1.0 / (1.0 - p);
    (0..batch).map(|_| if rng.bernoulli(p) { 0.0 } else { keep_scale }).collect()
}

/// MLP branch applied to each token row of a `T x d` matrix.
pub fn mlp_forward(x: &Matrix, mlp: &MlpParams) -> ModelResult<Matrix> {
    let mut hidden = x.matmul(&mlp.fc1_w)?;
    for row in 0..hidden.rows() {
        for (v, b) in hidden.row_mut(row).iter_mut().zip(&mlp.fc1_b) {
            *v = gelu(*v + b);
        }
    }
    let mut out = hidden.matmul(&mlp.fc2_w)?;
    for row in 0..out.rows() {
        for (v, b) in out.row_mut(row).iter_mut().zip(&mlp.fc2_b) {
            *v += b;
        }
    }
    Ok(out)
}

fn normed(x: &Matrix, ln: &LayerNormParams, identity: bool) -> ModelResult<Matrix> {
    if identity {
        Ok(x.clone())
    } else {
        layer_norm_rows(x, &ln.gamma, &ln.beta, LAYER_NORM_EPS).map_err(Into::into)
    }
}

/// One block applied to a whole batch:
/// `x <- x + gate * MHA(LN1(x))`, then `x <- x + gate * MLP(LN2(x))`.
///
/// During training each branch is dropped per sample with probability
/// `drop_path_p` and survivors are rescaled by `1/(1-p)`; at evaluation both
/// branches always apply, unscaled. The returned `pre_mlp_ln` is the LN2
/// output (the MLP branch's input), one of the measurement sites.
pub fn encoder_block_with_capture(
    x: &TokenBatch,
    params: &BlockParams,
    assignment: &[HeadKind],
    training: bool,
    rng: &mut RngState,
    capture_pre_mlp: bool,
) -> ModelResult<(TokenBatch, Option<TokenBatch>)> {
    let b = x.batch();
    let attn_gate = drop_path_mask(b, params.drop_path_p, training, rng);
    let mlp_gate = drop_path_mask(b, params.drop_path_p, training, rng);

    let mut out = x.clone();
    let mut pre_mlp =
        if capture_pre_mlp { Some(TokenBatch::zeros(b, x.seq_len(), x.dim())) } else { None };

    for s in 0..b {
        let xs = x.sequence(s);

        let attn_in = normed(&xs, &params.ln1, params.identity_layer_norm)?;
        let attn_out = mixed_multi_head(&attn_in, &params.attn, assignment)?;
        let mut mid = xs.clone();
        if attn_gate[s] != 0.0 {
            for (m, a) in mid.data_mut().iter_mut().zip(attn_out.data()) {
                *m += attn_gate[s] * a;
            }
        }

        let mlp_in = normed(&mid, &params.ln2, params.identity_layer_norm)?;
        if let Some(cap) = pre_mlp.as_mut() {
            cap.set_sequence(s, &mlp_in)?;
        }
        let mut final_seq = mid;
        if mlp_gate[s] != 0.0 {
            let mlp_out = mlp_forward(&mlp_in, &params.mlp)?;
            for (m, v) in final_seq.data_mut().iter_mut().zip(mlp_out.data()) {
                *m += mlp_gate[s] * v;
            }
        }
        out.set_sequence(s, &final_seq)?;
    }
    Ok((out, pre_mlp))
}

/// `encoder_block_with_capture` without the capture plumbing.
pub fn encoder_block(
    x: &TokenBatch,
    params: &BlockParams,
    assignment: &[HeadKind],
    training: bool,
    rng: &mut RngState,
) -> ModelResult<TokenBatch> {
    encoder_block_with_capture(x, params, assignment, training, rng, false).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::HeadParams;
    use lapform_core::{trunc_normal_init, RngState};

    fn random_block(d: usize, heads: usize, seed: u64, drop_path_p: f64) -> BlockParams {
        let mut rng = RngState::new(seed);
        let d_k = d / heads;
        let head = |rng: &mut RngState| HeadParams {
            w_q: trunc_normal_init(d, d_k, 0.2, rng),
            w_k: trunc_normal_init(d, d_k, 0.2, rng),
            w_v: trunc_normal_init(d, d_k, 0.2, rng),
            q_gain: None,
            k_gain: None,
        };
        BlockParams {
            ln1: LayerNormParams::identity_affine(d),
            attn: AttentionParams {
                heads: (0..heads).map(|_| head(&mut rng)).collect(),
                w_o: trunc_normal_init(d, d, 0.2, &mut rng),
            },
            ln2: LayerNormParams::identity_affine(d),
            mlp: MlpParams {
                fc1_w: trunc_normal_init(d, 4 * d, 0.2, &mut rng),
                fc1_b: vec![0.0; 4 * d],
                fc2_w: trunc_normal_init(4 * d, d, 0.2, &mut rng),
                fc2_b: vec![0.0; d],
            },
            drop_path_p,
            identity_layer_norm: false,
        }
    }

    fn zero_block(d: usize, heads: usize) -> BlockParams {
        let d_k = d / heads;
        let head = || HeadParams {
            w_q: Matrix::zeros(d, d_k),
            w_k: Matrix::zeros(d, d_k),
            w_v: Matrix::zeros(d, d_k),
            q_gain: None,
            k_gain: None,
        };
        BlockParams {
            ln1: LayerNormParams::identity_affine(d),
            attn: AttentionParams {
                heads: (0..heads).map(|_| head()).collect(),
                w_o: Matrix::zeros(d, d),
            },
            ln2: LayerNormParams::identity_affine(d),
            mlp: MlpParams {
                fc1_w: Matrix::zeros(d, 4 * d),
                fc1_b: vec![0.0; 4 * d],
                fc2_w: Matrix::zeros(4 * d, d),
                fc2_b: vec![0.0; d],
            },
            drop_path_p: 0.0,
            identity_layer_norm: false,
        }
    }

    fn random_batch(b: usize, t: usize, d: usize, seed: u64) -> TokenBatch {
        let mut rng = RngState::new(seed);
        TokenBatch::new(b, t, d, (0..b * t * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_branches_make_the_block_an_identity() {
        let x = random_batch(2, 3, 4, 1);
        let block = zero_block(4, 2);
        let assignment = [HeadKind::Standard, HeadKind::Laplacian];
        let out =
            encoder_block(&x, &block, &assignment, false, &mut RngState::new(0)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn forced_drop_skips_both_branches() {
        let x = random_batch(3, 4, 4, 2);
        let mut block = random_block(4, 2, 3, 0.999_999);
        block.drop_path_p = 0.999_999;
        let assignment = [HeadKind::Standard, HeadKind::Standard];
        // With p ~ 1 every sample drops both branches (draws below p), so the
        // block is the identity during training.
        let out = encoder_block(&x, &block, &assignment, true, &mut RngState::new(7)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn eval_ignores_drop_path_entirely() {
        let x = random_batch(2, 4, 4, 4);
        let mut with_p = random_block(4, 2, 5, 0.0);
        with_p.drop_path_p = 0.9;
        let mut without_p = with_p.clone();
        without_p.drop_path_p = 0.0;
        let assignment = [HeadKind::Laplacian, HeadKind::Standard];
        let a = encoder_block(&x, &with_p, &assignment, false, &mut RngState::new(1)).unwrap();
        let b = encoder_block(&x, &without_p, &assignment, false, &mut RngState::new(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_survivors_are_rescaled() {
        // One sample, p = 0.5: each branch either drops (identity) or applies
        // scaled by 2. Over seeds we must see the all-dropped outcome and the
        // all-kept outcome, the latter matching a straight-line recompute
        // with both branches doubled.
        let x = random_batch(1, 3, 4, 6);
        let block = random_block(4, 2, 7, 0.5);
        let assignment = [HeadKind::Standard, HeadKind::Laplacian];

        let xs = x.sequence(0);
        let n1 = layer_norm_rows(&xs, &block.ln1.gamma, &block.ln1.beta, LAYER_NORM_EPS).unwrap();
        let attn = mixed_multi_head(&n1, &block.attn, &assignment).unwrap();
        let y1 = xs.add(&attn.scale(2.0)).unwrap();
        let n2 = layer_norm_rows(&y1, &block.ln2.gamma, &block.ln2.beta, LAYER_NORM_EPS).unwrap();
        let mlp = mlp_forward(&n2, &block.mlp).unwrap();
        let both_kept = y1.add(&mlp.scale(2.0)).unwrap();

        let mut saw_drop = false;
        let mut saw_keep = false;
        for seed in 0..32 {
            let out =
                encoder_block(&x, &block, &assignment, true, &mut RngState::new(seed)).unwrap();
            if out == x {
                saw_drop = true;
            }
            if out
                .sequence(0)
                .data()
                .iter()
                .zip(both_kept.data())
                .all(|(a, b)| (a - b).abs() <= 1e-12)
            {
                saw_keep = true;
            }
        }
        assert!(saw_drop, "never saw a fully dropped sample");
        assert!(saw_keep, "never saw a fully kept, rescaled sample");
    }

    #[test]
    fn hand_recomputed_single_block_matches() {
        // Straight-line recomputation of the block arithmetic, written
        // independently of encoder_block's internals.
        let d = 4;
        let x = random_batch(1, 2, d, 8);
        let block = random_block(d, 2, 9, 0.0);
        let assignment = [HeadKind::Standard, HeadKind::Laplacian];
        let got =
            encoder_block(&x, &block, &assignment, false, &mut RngState::new(0)).unwrap();

        let xs = x.sequence(0);
        let n1 = layer_norm_rows(&xs, &block.ln1.gamma, &block.ln1.beta, LAYER_NORM_EPS).unwrap();
        let attn = mixed_multi_head(&n1, &block.attn, &assignment).unwrap();
        let mid = xs.add(&attn).unwrap();
        let n2 = layer_norm_rows(&mid, &block.ln2.gamma, &block.ln2.beta, LAYER_NORM_EPS).unwrap();
        let mlp = mlp_forward(&n2, &block.mlp).unwrap();
        let want = mid.add(&mlp).unwrap();
        for (a, b) in got.sequence(0).data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn gelu_matches_reference_values() {
        // Reference values of the tanh-approximated GELU.
        assert!((gelu(0.0)).abs() < 1e-15);
        assert!((gelu(1.0) - 0.841_191_990_608_276_8).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.158_808_009_391_723_24).abs() < 1e-12);
        // Derivative against central differences.
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "at {x}");
        }
    }

    #[test]
    fn drop_path_mask_values_and_eval_shortcut() {
        let mut rng = RngState::new(11);
        let mask = drop_path_mask(1000, 0.25, true, &mut rng);
        let expected_scale = 1.0 / 0.75;
        assert!(mask.iter().all(|m| *m == 0.0 || (*m - expected_scale).abs() < 1e-15));
        let dropped = mask.iter().filter(|m| **m == 0.0).count();
        assert!((150..350).contains(&dropped), "drop rate off: {dropped}/1000");
        assert_eq!(drop_path_mask(5, 0.25, false, &mut rng), vec![1.0; 5]);
    }
}
