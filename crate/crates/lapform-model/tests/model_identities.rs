//! Exact algebraic identities of the assembled model.

use lapform_core::{RngState, TokenBatch};
use lapform_model::{
    build_loss_tape, model_eval, AssignmentSpec, CaptureOptions, InputBatch, InputSpec,
    ModelConfig, ParamSet,
};

fn mixed_config() -> ModelConfig {
    ModelConfig {
        depth: 2,
        heads: 2,
        dim: 8,
        head_dim: None,
        mlp_ratio: 2,
        num_classes: 3,
        input: InputSpec::SyntheticTokens { seq_len: 4 },
        drop_path_p: 0.0,
        qk_norm: false,
        head_assignment: AssignmentSpec::Uniform { laplacian_heads: 1 },
    }
}

fn random_tokens(cfg: &ModelConfig, batch: usize, seed: u64) -> InputBatch {
    let mut rng = RngState::new(seed);
    let t = cfg.seq_len();
    let data: Vec<f64> = (0..batch * t * cfg.dim).map(|_| rng.normal()).collect();
    InputBatch::Tokens(TokenBatch::new(batch, t, cfg.dim, data).unwrap())
}

/// Flipping the sign of one head's value weights together with its slice of
/// the output projection leaves the model bit-identical: the two negations
/// cancel exactly in IEEE arithmetic, for either head kind.
#[test]
fn value_and_output_sign_flips_cancel_exactly() {
    let cfg = mixed_config();
    let input = random_tokens(&cfg, 3, 17);
    let baseline_params = ParamSet::init(&cfg, 40).unwrap();
    let baseline = model_eval(&cfg, &baseline_params, &input).unwrap();

    let dk = cfg.head_dim();
    for layer in 0..cfg.depth {
        for head in 0..cfg.heads {
            let mut params = ParamSet::init(&cfg, 40).unwrap();
            for v in &mut params.get_mut(&format!("block{layer}.head{head}.wv")).unwrap().data {
                *v = -*v;
            }
            // Rows [head*dk, (head+1)*dk) of the output projection act on
            // this head's slice of the concatenated output.
            let wo = params.get_mut(&format!("block{layer}.wo")).unwrap();
            let cols = wo.shape[1];
            for r in head * dk..(head + 1) * dk {
                for c in 0..cols {
                    wo.data[r * cols + c] = -wo.data[r * cols + c];
                }
            }
            let flipped = model_eval(&cfg, &params, &input).unwrap();
            assert_eq!(
                baseline.data(),
                flipped.data(),
                "sign flip at layer {layer} head {head} changed the logits"
            );
        }
    }
}

/// With the classifier zeroed the logits vanish, so the bias gradient is the
/// uniform distribution minus the empirical label distribution.
#[test]
fn bias_gradient_at_zero_classifier_is_softmax_minus_onehot() {
    let cfg = mixed_config();
    let input = random_tokens(&cfg, 4, 3);
    let labels = vec![0, 2, 2, 1];
    let mut params = ParamSet::init(&cfg, 12).unwrap();
    params.get_mut("classifier.weight").unwrap().data.fill(0.0);
    params.get_mut("classifier.bias").unwrap().data.fill(0.0);

    let taped = build_loss_tape(&cfg, &params, &input, &labels, None).unwrap();
    let mut grads = taped.tape.backward(taped.loss).unwrap();
    let bias_idx = params.index_of("classifier.bias").unwrap();
    let g = grads.take(taped.param_ids[bias_idx]).unwrap();

    let c = cfg.num_classes as f64;
    let b = labels.len() as f64;
    for (class, gv) in g.iter().enumerate() {
        let count = labels.iter().filter(|l| **l == class).count() as f64;
        let expected = 1.0 / c - count / b;
        assert!(
            (gv - expected).abs() < 1e-14,
            "class {class}: gradient {gv}, expected {expected}"
        );
    }
}

/// A sequence that is constant over tokens (and stays so because the
/// position offsets are zeroed) is annihilated by every complement head, so
/// logits match a model whose attention output projection is zeroed.
#[test]
fn constant_sequences_bypass_complement_only_attention() {
    let mut cfg = mixed_config();
    cfg.head_assignment = AssignmentSpec::Uniform { laplacian_heads: 2 };
    let mut params = ParamSet::init(&cfg, 8).unwrap();
    params.get_mut("pos.embed").unwrap().data.fill(0.0);

    let mut rng = RngState::new(5);
    let t = cfg.seq_len();
    let mut data = Vec::new();
    for _ in 0..3 {
        let token: Vec<f64> = (0..cfg.dim).map(|_| rng.normal()).collect();
        for _ in 0..t {
            data.extend_from_slice(&token);
        }
    }
    let input = InputBatch::Tokens(TokenBatch::new(3, t, cfg.dim, data).unwrap());

    let with_attn = model_eval(&cfg, &params, &input).unwrap();

    let mut no_attn = ParamSet::init(&cfg, 8).unwrap();
    no_attn.get_mut("pos.embed").unwrap().data.fill(0.0);
    for layer in 0..cfg.depth {
        no_attn.get_mut(&format!("block{layer}.wo")).unwrap().data.fill(0.0);
    }
    let without = model_eval(&cfg, &no_attn, &input).unwrap();

    for (a, b) in with_attn.data().iter().zip(without.data()) {
        assert!(
            (a - b).abs() <= 1e-12,
            "complement attention moved a constant sequence: {a} vs {b}"
        );
    }
}

/// Capture options return exactly the requested activations.
#[test]
fn capture_surface_matches_requests() {
    let cfg = mixed_config();
    let params = ParamSet::init(&cfg, 6).unwrap();
    let input = random_tokens(&cfg, 2, 9);

    let none = lapform_model::model_forward(
        &cfg,
        &params,
        &input,
        false,
        None,
        &CaptureOptions::none(),
    )
    .unwrap();
    assert!(none.capture.block_outputs.is_empty());
    assert!(none.capture.pre_mlp_ln.is_empty());
    assert!(none.capture.final_ln.is_none());
    assert!(none.capture.pooled.is_none());

    let all = lapform_model::model_forward(
        &cfg,
        &params,
        &input,
        false,
        None,
        &CaptureOptions::all(),
    )
    .unwrap();
    assert_eq!(all.capture.block_outputs.len(), cfg.depth);
    assert_eq!(all.capture.pre_mlp_ln.len(), cfg.depth);
    let final_ln = all.capture.final_ln.as_ref().unwrap();
    assert_eq!(final_ln.dim(), cfg.dim);
    let pooled = all.capture.pooled.as_ref().unwrap();
    assert_eq!((pooled.rows(), pooled.cols()), (2, cfg.dim));
    // Pooled rows are the token means of the final normalized state.
    for b in 0..2 {
        for j in 0..cfg.dim {
            let mean: f64 = (0..cfg.seq_len())
                .map(|i| final_ln.token(b, i)[j])
                .sum::<f64>()
                / cfg.seq_len() as f64;
            assert!((pooled.get(b, j) - mean).abs() < 1e-15);
        }
    }
    // Logits agree between the two calls.
    for (a, b) in none.logits.data().iter().zip(all.logits.data()) {
        assert_eq!(a, b);
    }
}
