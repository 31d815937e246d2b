//! Full forward pass: embedding, encoder stack, pooled classifier head.
//!
//! Two routes share the same arithmetic: a plain evaluation path built on
//! `Matrix`/`TokenBatch`, and a taped path (`build_loss_tape`) that records
//! every primitive for reverse-mode gradients. The parity between the two is
//! pinned by tests at 1e-12.

use lapform_core::{layer_norm, Matrix, RngState, TokenBatch};

use crate::attention::QK_NORM_EPS;
use crate::block::{drop_path_mask, encoder_block_with_capture, LAYER_NORM_EPS};
use crate::config::ModelConfig;
use crate::error::{ModelError, ModelResult};
use crate::head::HeadKind;
use crate::params::ParamSet;
use crate::tape::{Tape, ValueId};

/// Raw images in NHWC order (sample, row, column, channel).
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBatch {
    pub fn new(
        count: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> ModelResult<Self> {
        if data.len() != count * height * width * channels {
            return Err(ModelError::Data(format!(
                "{} pixels for {count}x{height}x{width}x{channels} images",
                data.len()
            )));
        }
        Ok(Self { count, height, width, channels, data })
    }

    fn pixel(&self, n: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[((n * self.height + y) * self.width + x) * self.channels + c]
    }
}

#[derive(Debug, Clone)]
pub enum InputBatch {
    Tokens(TokenBatch),
    Images(ImageBatch),
}

impl InputBatch {
    pub fn len(&self) -> usize {
        match self {
            InputBatch::Tokens(t) => t.batch(),
            InputBatch::Images(i) => i.count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> InputBatch {
        match self {
            InputBatch::Tokens(t) => InputBatch::Tokens(t.select(indices)),
            InputBatch::Images(im) => {
                let stride = im.height * im.width * im.channels;
                let mut data = Vec::with_capacity(indices.len() * stride);
                for &i in indices {
                    data.extend_from_slice(&im.data[i * stride..(i + 1) * stride]);
                }
                InputBatch::Images(ImageBatch {
                    count: indices.len(),
                    height: im.height,
                    width: im.width,
                    channels: im.channels,
                    data,
                })
            }
        }
    }
}

/// Cuts an image batch into a row-major patch grid; each token lists its
/// patch pixels in (row, column, channel) order.
pub fn patchify(images: &ImageBatch, patch_size: usize) -> ModelResult<TokenBatch> {
    if patch_size == 0
        || images.height % patch_size != 0
        || images.width % patch_size != 0
        || images.height != images.width
    {
        return Err(ModelError::Data(format!(
            "cannot patchify {}x{} images with patch size {patch_size}",
            images.height, images.width
        )));
    }
    let grid = images.height / patch_size;
    let tokens = grid * grid;
    let token_dim = patch_size * patch_size * images.channels;
    let mut data = Vec::with_capacity(images.count * tokens * token_dim);
    for n in 0..images.count {
        for py in 0..grid {
            for px in 0..grid {
                for y in 0..patch_size {
                    for x in 0..patch_size {
                        for c in 0..images.channels {
                            data.push(images.pixel(
                                n,
                                py * patch_size + y,
                                px * patch_size + x,
                                c,
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(TokenBatch::new(images.count, tokens, token_dim, data)?)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CaptureOptions {
    /// Token state right after embedding and position offsets.
    pub embedded: bool,
    /// Output of every encoder block.
    pub block_outputs: bool,
    /// The normalized mid-block state feeding each MLP.
    pub pre_mlp_ln: bool,
    /// Token state after the final layer norm (affine included).
    pub final_ln: bool,
    /// Pooled per-sample features entering the classifier.
    pub pooled: bool,
}

impl CaptureOptions {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self { embedded: true, block_outputs: true, pre_mlp_ln: true, final_ln: true, pooled: true }
    }
}

#[derive(Debug, Default)]
pub struct ActivationCapture {
    pub embedded: Option<TokenBatch>,
    pub block_outputs: Vec<TokenBatch>,
    pub pre_mlp_ln: Vec<TokenBatch>,
    pub final_ln: Option<TokenBatch>,
    pub pooled: Option<Matrix>,
}

#[derive(Debug)]
pub struct ModelOutput {
    pub logits: Matrix,
    pub capture: ActivationCapture,
    /// Head kinds actually applied, per layer.
    pub trace: Vec<Vec<HeadKind>>,
}

/// Embeds raw input into the model width and adds position offsets.
fn embed(cfg: &ModelConfig, params: &ParamSet, input: &InputBatch) -> ModelResult<TokenBatch> {
    let tokens = match input {
        InputBatch::Tokens(t) => {
            if t.dim() != cfg.dim || t.seq_len() != cfg.seq_len() {
                return Err(ModelError::Data(format!(
                    "token batch is {}x{}, model expects {}x{}",
                    t.seq_len(),
                    t.dim(),
                    cfg.seq_len(),
                    cfg.dim
                )));
            }
            t.clone()
        }
        InputBatch::Images(images) => {
            let patch_size = match &cfg.input {
                crate::config::InputSpec::Image { patch_size, .. } => *patch_size,
                _ => {
                    return Err(ModelError::Data(
                        "model configured for token input, got images".into(),
                    ))
                }
            };
            let patches = patchify(images, patch_size)?;
            if patches.dim() != cfg.input_token_dim() || patches.seq_len() != cfg.seq_len() {
                return Err(ModelError::Data(format!(
                    "patched input is {}x{}, model expects {}x{}",
                    patches.seq_len(),
                    patches.dim(),
                    cfg.seq_len(),
                    cfg.input_token_dim()
                )));
            }
            let weight = params.get("embed.weight")?.as_matrix();
            let flat = patches.flatten().matmul(&weight)?;
            TokenBatch::new(
                patches.batch(),
                patches.seq_len(),
                cfg.dim,
                flat.data().to_vec(),
            )?
        }
    };

    let pos = params.get("pos.embed")?;
    let (t, d) = (cfg.seq_len(), cfg.dim);
    let mut out = tokens;
    for b in 0..out.batch() {
        for i in 0..t {
            let row = out.token_mut(b, i);
            for j in 0..d {
                row[j] += pos.data[i * d + j];
            }
        }
    }
    Ok(out)
}

/// Evaluation/diagnostic forward pass over the plain matrix kernels.
///
/// `rng` is only consumed when `training` is true and drop-path is active;
/// pass `None` otherwise.
pub fn model_forward(
    cfg: &ModelConfig,
    params: &ParamSet,
    input: &InputBatch,
    training: bool,
    mut rng: Option<&mut RngState>,
    capture: &CaptureOptions,
) -> ModelResult<ModelOutput> {
    cfg.validate()?;
    let assignment = cfg.assignment()?;
    let mut x = embed(cfg, params, input)?;

    let mut cap = ActivationCapture::default();
    if capture.embedded {
        cap.embedded = Some(x.clone());
    }

    let mut fallback_rng = RngState::new(0);
    for layer in 0..cfg.depth {
        let block = params.block_params(cfg, layer)?;
        let layer_rng: &mut RngState = match rng.as_deref_mut() {
            Some(r) => r,
            None => &mut fallback_rng,
        };
        let (next, pre_mlp) = encoder_block_with_capture(
            &x,
            &block,
            &assignment.per_layer[layer],
            training,
            layer_rng,
            capture.pre_mlp_ln,
        )?;
        x = next;
        if capture.block_outputs {
            cap.block_outputs.push(x.clone());
        }
        if let Some(p) = pre_mlp {
            cap.pre_mlp_ln.push(p);
        }
    }

    let final_gamma = params.get("final_ln.gamma")?;
    let final_beta = params.get("final_ln.beta")?;
    let normed = layer_norm(&x, &final_gamma.data, &final_beta.data, LAYER_NORM_EPS)?;
    if capture.final_ln {
        cap.final_ln = Some(normed.clone());
    }

    // Mean over tokens, then the linear classifier.
    let (batch, t, d) = (normed.batch(), normed.seq_len(), normed.dim());
    let mut pooled = Matrix::zeros(batch, d);
    for b in 0..batch {
        let out = pooled.row_mut(b);
        for i in 0..t {
            let row = normed.token(b, i);
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= t as f64;
        }
    }
    if capture.pooled {
        cap.pooled = Some(pooled.clone());
    }

    let weight = params.get("classifier.weight")?.as_matrix();
    let bias = params.get("classifier.bias")?;
    let mut logits = pooled.matmul(&weight)?;
    for r in 0..logits.rows() {
        for (v, b) in logits.row_mut(r).iter_mut().zip(&bias.data) {
            *v += b;
        }
    }

    Ok(ModelOutput { logits, capture: cap, trace: assignment.per_layer.clone() })
}

/// Forward pass in evaluation mode returning logits only.
pub fn model_eval(cfg: &ModelConfig, params: &ParamSet, input: &InputBatch) -> ModelResult<Matrix> {
    Ok(model_forward(cfg, params, input, false, None, &CaptureOptions::none())?.logits)
}

/// Mean cross-entropy of logits against integer labels, via log-sum-exp.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> ModelResult<f64> {
    if logits.rows() != labels.len() {
        return Err(ModelError::Data(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(ModelError::Data("empty batch".into()));
    }
    let classes = logits.cols();
    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        if *label >= classes {
            return Err(ModelError::Data(format!(
                "label {label} at index {i} out of range for {classes} classes"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[*label];
    }
    Ok(total / labels.len() as f64)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> ModelResult<f64> {
    if logits.rows() != labels.len() || labels.is_empty() {
        return Err(ModelError::Data("logit rows and labels must match and be non-empty".into()));
    }
    let mut hits = 0usize;
    for (i, label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (c, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = c;
            }
        }
        if best == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Pre-scaled drop-path gates (0 or 1/(1-p)) for one batch, one entry per
/// sample, one pair of branches per block.
#[derive(Debug, Clone)]
pub struct DropMasks {
    pub attn: Vec<Vec<f64>>,
    pub mlp: Vec<Vec<f64>>,
}

impl DropMasks {
    /// Draws masks in the same stream order as the plain path: for each
    /// block, the attention gates for the whole batch, then the MLP gates.
    pub fn draw(cfg: &ModelConfig, batch: usize, rng: &mut RngState) -> Self {
        let mut attn = Vec::with_capacity(cfg.depth);
        let mut mlp = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            attn.push(drop_path_mask(batch, cfg.drop_path_p, true, rng));
            mlp.push(drop_path_mask(batch, cfg.drop_path_p, true, rng));
        }
        Self { attn, mlp }
    }
}

/// A recorded forward pass ending in the scalar training loss.
pub struct TapedLoss {
    pub tape: Tape,
    pub loss: ValueId,
    /// Parameter tape ids, aligned with `ParamSet::params()` order.
    pub param_ids: Vec<ValueId>,
    pub logits: ValueId,
    pub trace: Vec<Vec<HeadKind>>,
}

/// Records the full forward pass on a fresh tape. With `drop_masks: None`
/// the branches are ungated (evaluation semantics).
pub fn build_loss_tape(
    cfg: &ModelConfig,
    params: &ParamSet,
    input: &InputBatch,
    labels: &[usize],
    drop_masks: Option<&DropMasks>,
) -> ModelResult<TapedLoss> {
    cfg.validate()?;
    let assignment = cfg.assignment()?;
    if let Some(masks) = drop_masks {
        if masks.attn.len() != cfg.depth || masks.mlp.len() != cfg.depth {
            return Err(ModelError::Data(format!(
                "drop masks cover {} blocks, model has {}",
                masks.attn.len(),
                cfg.depth
            )));
        }
    }

    let mut tape = Tape::new();
    let mut param_ids = Vec::with_capacity(params.len());
    for p in params.params() {
        param_ids.push(tape.leaf(p.data.clone(), p.shape.clone(), true)?);
    }
    let id_of = |name: &str| -> ModelResult<ValueId> {
        params.index_of(name).map(|i| param_ids[i])
    };

    let (batch, t, d) = (input.len(), cfg.seq_len(), cfg.dim);
    let raw = match input {
        InputBatch::Tokens(tb) => {
            if tb.dim() != d || tb.seq_len() != t {
                return Err(ModelError::Data(format!(
                    "token batch is {}x{}, model expects {t}x{d}",
                    tb.seq_len(),
                    tb.dim()
                )));
            }
            tb.clone()
        }
        InputBatch::Images(images) => {
            let patch_size = match &cfg.input {
                crate::config::InputSpec::Image { patch_size, .. } => *patch_size,
                _ => {
                    return Err(ModelError::Data(
                        "model configured for token input, got images".into(),
                    ))
                }
            };
            patchify(images, patch_size)?
        }
    };
    let raw_dim = raw.dim();
    let input_id = tape.leaf(raw.data().to_vec(), vec![batch, t, raw_dim], false)?;

    let mut x = if cfg.uses_patch_embedding() {
        tape.matmul(input_id, id_of("embed.weight")?)?
    } else {
        input_id
    };
    x = tape.add_bias(x, id_of("pos.embed")?)?;

    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    for layer in 0..cfg.depth {
        let prefix = format!("block{layer}");
        let h = tape.layer_norm(
            x,
            id_of(&format!("{prefix}.ln1.gamma"))?,
            id_of(&format!("{prefix}.ln1.beta"))?,
            LAYER_NORM_EPS,
        )?;
        let mut head_outs = Vec::with_capacity(cfg.heads);
        for (head, kind) in assignment.per_layer[layer].iter().enumerate() {
            let mut q = tape.matmul(h, id_of(&format!("{prefix}.head{head}.wq"))?)?;
            let mut k = tape.matmul(h, id_of(&format!("{prefix}.head{head}.wk"))?)?;
            if cfg.qk_norm {
                q = tape.normalize_rows(q, QK_NORM_EPS);
                q = tape.scale_channels(q, id_of(&format!("{prefix}.head{head}.q_gain"))?)?;
                k = tape.normalize_rows(k, QK_NORM_EPS);
                k = tape.scale_channels(k, id_of(&format!("{prefix}.head{head}.k_gain"))?)?;
            }
            let v = tape.matmul(h, id_of(&format!("{prefix}.head{head}.wv"))?)?;
            let scores = tape.bmm_nt(q, k)?;
            let scaled = tape.scale(scores, scale);
            let p = tape.softmax_last(scaled);
            let pv = tape.bmm_nn(p, v)?;
            head_outs.push(match kind {
                HeadKind::Standard => pv,
                HeadKind::Laplacian => tape.sub(v, pv)?,
            });
        }
        let cat = tape.concat_last(&head_outs)?;
        let mut attn = tape.matmul(cat, id_of(&format!("{prefix}.wo"))?)?;
        if let Some(masks) = drop_masks {
            attn = tape.gate_rows(attn, masks.attn[layer].clone())?;
        }
        x = tape.add(x, attn)?;

        let h2 = tape.layer_norm(
            x,
            id_of(&format!("{prefix}.ln2.gamma"))?,
            id_of(&format!("{prefix}.ln2.beta"))?,
            LAYER_NORM_EPS,
        )?;
        let mut m = tape.matmul(h2, id_of(&format!("{prefix}.mlp.fc1_w"))?)?;
        m = tape.add_bias(m, id_of(&format!("{prefix}.mlp.fc1_b"))?)?;
        m = tape.gelu(m);
        m = tape.matmul(m, id_of(&format!("{prefix}.mlp.fc2_w"))?)?;
        m = tape.add_bias(m, id_of(&format!("{prefix}.mlp.fc2_b"))?)?;
        if let Some(masks) = drop_masks {
            m = tape.gate_rows(m, masks.mlp[layer].clone())?;
        }
        x = tape.add(x, m)?;
    }

    let f = tape.layer_norm(x, id_of("final_ln.gamma")?, id_of("final_ln.beta")?, LAYER_NORM_EPS)?;
    let pooled = tape.mean_tokens(f)?;
    let mut logits = tape.matmul(pooled, id_of("classifier.weight")?)?;
    logits = tape.add_bias(logits, id_of("classifier.bias")?)?;
    let loss = tape.cross_entropy_mean(logits, labels)?;

    Ok(TapedLoss { tape, loss, param_ids, logits, trace: assignment.per_layer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{InputSpec, ModelConfig};
    use crate::head::AssignmentSpec;

    fn small_config(depth: usize, qk_norm: bool, laplacian_heads: usize) -> ModelConfig {
        ModelConfig {
            depth,
            heads: 2,
            dim: 8,
            head_dim: None,
            mlp_ratio: 4,
            num_classes: 3,
            input: InputSpec::SyntheticTokens { seq_len: 4 },
            drop_path_p: 0.0,
            qk_norm,
            head_assignment: AssignmentSpec::Uniform { laplacian_heads },
        }
    }

    fn random_tokens(cfg: &ModelConfig, batch: usize, seed: u64) -> InputBatch {
        let mut rng = RngState::new(seed);
        let t = cfg.seq_len();
        let data: Vec<f64> = (0..batch * t * cfg.dim).map(|_| rng.normal()).collect();
        InputBatch::Tokens(TokenBatch::new(batch, t, cfg.dim, data).unwrap())
    }

    #[test]
    fn taped_and_plain_paths_agree_to_machine_precision() {
        for (qk_norm, lap) in [(false, 1), (true, 2), (false, 0)] {
            let cfg = small_config(2, qk_norm, lap);
            let params = ParamSet::init(&cfg, 11).unwrap();
            let input = random_tokens(&cfg, 3, 5);
            let labels = vec![0, 2, 1];

            let plain = model_forward(&cfg, &params, &input, false, None, &CaptureOptions::none())
                .unwrap();
            let plain_loss = cross_entropy(&plain.logits, &labels).unwrap();

            let taped = build_loss_tape(&cfg, &params, &input, &labels, None).unwrap();
            let tl = taped.tape.scalar(taped.loss).unwrap();
            assert!(
                (tl - plain_loss).abs() <= 1e-12,
                "loss mismatch (qk_norm={qk_norm}, lap={lap}): {tl} vs {plain_loss}"
            );
            let taped_logits = taped.tape.data(taped.logits);
            for (a, b) in taped_logits.iter().zip(plain.logits.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn image_input_paths_agree() {
        let cfg = ModelConfig {
            depth: 1,
            heads: 2,
            dim: 8,
            head_dim: None,
            mlp_ratio: 2,
            num_classes: 2,
            input: InputSpec::Image { image_size: 4, patch_size: 2, channels: 1 },
            drop_path_p: 0.0,
            qk_norm: false,
            head_assignment: AssignmentSpec::Uniform { laplacian_heads: 1 },
        };
        let params = ParamSet::init(&cfg, 3).unwrap();
        let mut rng = RngState::new(9);
        let data: Vec<f64> = (0..2 * 4 * 4).map(|_| rng.normal()).collect();
        let input = InputBatch::Images(ImageBatch::new(2, 4, 4, 1, data).unwrap());
        let labels = vec![1, 0];

        let plain = model_eval(&cfg, &params, &input).unwrap();
        let taped = build_loss_tape(&cfg, &params, &input, &labels, None).unwrap();
        for (a, b) in taped.tape.data(taped.logits).iter().zip(plain.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn patchify_orders_patches_row_major_and_pixels_within() {
        // 1 image, 4x4, 1 channel, pixel value = 10*y + x.
        let data: Vec<f64> =
            (0..16).map(|i| (10 * (i / 4) + (i % 4)) as f64).collect();
        let images = ImageBatch::new(1, 4, 4, 1, data).unwrap();
        let patches = patchify(&images, 2).unwrap();
        assert_eq!(patches.seq_len(), 4);
        assert_eq!(patches.dim(), 4);
        // Patch (0,0): pixels (0,0),(0,1),(1,0),(1,1).
        assert_eq!(patches.token(0, 0), &[0.0, 1.0, 10.0, 11.0]);
        // Patch (0,1) is to the right: columns 2..4.
        assert_eq!(patches.token(0, 1), &[2.0, 3.0, 12.0, 13.0]);
        // Patch (1,0) is below.
        assert_eq!(patches.token(0, 2), &[20.0, 21.0, 30.0, 31.0]);
    }

    #[test]
    fn depth_zero_reduces_to_normed_pooled_linear_classifier() {
        let cfg = small_config(0, false, 0);
        let params = ParamSet::init(&cfg, 7).unwrap();
        let input = random_tokens(&cfg, 2, 1);
        let out = model_forward(&cfg, &params, &input, false, None, &CaptureOptions::all()).unwrap();
        assert!(out.capture.block_outputs.is_empty());
        assert_eq!(out.logits.rows(), 2);
        assert_eq!(out.logits.cols(), 3);
        let taped = build_loss_tape(&cfg, &params, &input, &[0, 1], None).unwrap();
        for (a, b) in taped.tape.data(taped.logits).iter().zip(out.logits.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn duplicate_sequences_get_identical_logits() {
        let cfg = small_config(2, false, 1);
        let params = ParamSet::init(&cfg, 21).unwrap();
        let mut rng = RngState::new(4);
        let t = cfg.seq_len();
        let one: Vec<f64> = (0..t * cfg.dim).map(|_| rng.normal()).collect();
        let mut data = one.clone();
        data.extend_from_slice(&one);
        let input = InputBatch::Tokens(TokenBatch::new(2, t, cfg.dim, data).unwrap());
        let logits = model_eval(&cfg, &params, &input).unwrap();
        for c in 0..logits.cols() {
            assert_eq!(logits.get(0, c), logits.get(1, c));
        }
    }

    #[test]
    fn drop_mask_gating_matches_plain_training_pass() {
        // Force a deterministic comparison by drawing masks from a cloned
        // stream and replaying the same stream through the plain path.
        let mut cfg = small_config(2, false, 1);
        cfg.drop_path_p = 0.5;
        let params = ParamSet::init(&cfg, 13).unwrap();
        let input = random_tokens(&cfg, 4, 8);
        let labels = vec![0, 1, 2, 0];

        let mut rng_plain = RngState::new(77);
        let mut rng_masks = RngState::new(77);
        let masks = DropMasks::draw(&cfg, 4, &mut rng_masks);

        let plain = model_forward(
            &cfg,
            &params,
            &input,
            true,
            Some(&mut rng_plain),
            &CaptureOptions::none(),
        )
        .unwrap();
        let taped = build_loss_tape(&cfg, &params, &input, &labels, Some(&masks)).unwrap();
        for (a, b) in taped.tape.data(taped.logits).iter().zip(plain.logits.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        // Both paths drew the same number of variates.
        assert_eq!(rng_plain.counter(), rng_masks.counter());
    }

    #[test]
    fn cross_entropy_reference_values() {
        let logits = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let loss = cross_entropy(&logits, &[1]).unwrap();
        assert!((loss - 0.313_261_687_518_222_86).abs() < 1e-15);

        let uniform = Matrix::new(2, 5, vec![3.0; 10]).unwrap();
        let loss = cross_entropy(&uniform, &[4, 0]).unwrap();
        assert!((loss - 5.0_f64.ln()).abs() < 1e-15);

        assert!(cross_entropy(&uniform, &[5, 0]).is_err());
    }

    #[test]
    fn accuracy_breaks_ties_toward_lower_index() {
        let logits = Matrix::new(2, 3, vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(accuracy(&logits, &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&logits, &[1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn head_trace_reports_the_assignment() {
        let cfg = small_config(2, false, 1);
        let params = ParamSet::init(&cfg, 2).unwrap();
        let input = random_tokens(&cfg, 1, 3);
        let out = model_forward(&cfg, &params, &input, false, None, &CaptureOptions::none())
            .unwrap();
        assert_eq!(
            out.trace,
            vec![
                vec![HeadKind::Laplacian, HeadKind::Standard],
                vec![HeadKind::Laplacian, HeadKind::Standard]
            ]
        );
    }
}
