//! Tape-based reverse-mode differentiation over tensor-level primitives.
//!
//! Builders execute eagerly and append one record per primitive, so the op
//! list is already a topological order of the dataflow graph; `backward`
//! walks it once in reverse, accumulating vector-Jacobian products into
//! per-slot gradient buffers.

use crate::block::{gelu, gelu_grad};
use crate::error::{ModelError, ModelResult};

pub type ValueId = usize;

#[derive(Debug)]
struct Slot {
    data: Vec<f64>,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug)]
enum Op {
    /// y = x @ w, x rows of length k, w: [k, m].
    Matmul { x: ValueId, w: ValueId, y: ValueId },
    /// y[b] = a[b] @ b[b] for [B, m, k] x [B, k, n].
    BmmNn { a: ValueId, b: ValueId, y: ValueId },
    /// y[b] = a[b] @ b[b]^T for [B, m, k] x [B, n, k].
    BmmNt { a: ValueId, b: ValueId, y: ValueId },
    Add { a: ValueId, b: ValueId, y: ValueId },
    Sub { a: ValueId, b: ValueId, y: ValueId },
    Scale { x: ValueId, c: f64, y: ValueId },
    /// y row = x row + bias, rows of length bias.len().
    AddBias { x: ValueId, bias: ValueId, y: ValueId },
    /// y row = x row * gain (elementwise), rows of length gain.len().
    ScaleChannels { x: ValueId, gain: ValueId, y: ValueId },
    /// Softmax over trailing segments of length `last`.
    SoftmaxLast { x: ValueId, y: ValueId, last: usize },
    /// Per-row layer norm with affine parameters.
    LayerNorm { x: ValueId, gamma: ValueId, beta: ValueId, y: ValueId, eps: f64, last: usize },
    /// y row = x row / sqrt(|x row|^2 + eps).
    NormalizeRows { x: ValueId, y: ValueId, eps: f64, last: usize },
    Gelu { x: ValueId, y: ValueId },
    /// [B, T, d] -> [B, d], mean over tokens.
    MeanTokens { x: ValueId, y: ValueId },
    /// Concatenate along the last axis.
    ConcatLast { parts: Vec<ValueId>, y: ValueId },
    /// y[b] = gates[b] * x[b]; the gates are constants (drop-path masks).
    GateRows { x: ValueId, gates: Vec<f64>, y: ValueId },
    /// Mean over the batch of -log softmax(logits)[label].
    CrossEntropyMean { logits: ValueId, labels: Vec<usize>, y: ValueId },
    SumAll { x: ValueId, y: ValueId },
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

#[derive(Debug, Default)]
pub struct Tape {
    slots: Vec<Slot>,
    ops: Vec<Op>,
}

/// Gradient buffers per slot after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Vec<f64>> {
        self.grads.get_mut(id).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, trainable: bool) -> ModelResult<ValueId> {
        if data.len() != numel(&shape) {
            return Err(ModelError::TapeShape {
                op: "leaf",
                detail: format!("{} entries for shape {shape:?}", data.len()),
            });
        }
        Ok(self.push(data, shape, trainable))
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, trainable: bool) -> ValueId {
        self.slots.push(Slot { data, shape, trainable });
        self.slots.len() - 1
    }

    pub fn data(&self, id: ValueId) -> &[f64] {
        &self.slots[id].data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.slots[id].shape
    }

    pub fn scalar(&self, id: ValueId) -> ModelResult<f64> {
        if self.slots[id].data.len() != 1 {
            return Err(ModelError::TapeShape {
                op: "scalar",
                detail: format!("slot has shape {:?}", self.slots[id].shape),
            });
        }
        Ok(self.slots[id].data[0])
    }

    /// Overwrites a leaf's contents in place (same length), e.g. to re-run a
    /// forward pass with perturbed parameters.
    pub fn set_leaf(&mut self, id: ValueId, data: &[f64]) -> ModelResult<()> {
        if self.slots[id].data.len() != data.len() {
            return Err(ModelError::TapeShape { op: "set_leaf", detail: "length mismatch".into() });
        }
        self.slots[id].data.copy_from_slice(data);
        Ok(())
    }

    /// Recomputes every op in record order, refreshing all outputs. Used by
    /// finite-difference checks after `set_leaf`.
    pub fn replay_forward(&mut self) {
        for i in 0..self.ops.len() {
            let op = std::mem::replace(&mut self.ops[i], Op::SumAll { x: 0, y: 0 });
            self.eval_forward(&op);
            self.ops[i] = op;
        }
    }

    // ---- builders -------------------------------------------------------

    pub fn matmul(&mut self, x: ValueId, w: ValueId) -> ModelResult<ValueId> {
        let (xs, ws) = (&self.slots[x].shape, &self.slots[w].shape);
        if ws.len() != 2 || last_dim(xs) != ws[0] {
            return Err(ModelError::TapeShape {
                op: "matmul",
                detail: format!("{xs:?} @ {ws:?}"),
            });
        }
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = ws[1];
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::Matmul { x, w, y };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn bmm_nn(&mut self, a: ValueId, b: ValueId) -> ModelResult<ValueId> {
        let (sa, sb) = (&self.slots[a].shape, &self.slots[b].shape);
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(ModelError::TapeShape { op: "bmm_nn", detail: format!("{sa:?} @ {sb:?}") });
        }
        let shape = vec![sa[0], sa[1], sb[2]];
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::BmmNn { a, b, y };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn bmm_nt(&mut self, a: ValueId, b: ValueId) -> ModelResult<ValueId> {
        let (sa, sb) = (&self.slots[a].shape, &self.slots[b].shape);
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(ModelError::TapeShape { op: "bmm_nt", detail: format!("{sa:?} @ {sb:?}^T") });
        }
        let shape = vec![sa[0], sa[1], sb[1]];
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::BmmNt { a, b, y };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ModelResult<ValueId> {
        self.binary_same_shape("add", a, b, |t, a, b, y| {
            t.ops.push(Op::Add { a, b, y });
        })
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ModelResult<ValueId> {
        self.binary_same_shape("sub", a, b, |t, a, b, y| {
            t.ops.push(Op::Sub { a, b, y });
        })
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: ValueId,
        b: ValueId,
        record: impl FnOnce(&mut Tape, ValueId, ValueId, ValueId),
    ) -> ModelResult<ValueId> {
        if self.slots[a].shape != self.slots[b].shape {
            return Err(ModelError::TapeShape {
                op: name,
                detail: format!("{:?} vs {:?}", self.slots[a].shape, self.slots[b].shape),
            });
        }
        let shape = self.slots[a].shape.clone();
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        record(self, a, b, y);
        let op = self.ops.pop().unwrap();
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let shape = self.slots[x].shape.clone();
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::Scale { x, c, y };
        self.eval_forward(&op);
        self.ops.push(op);
        y
    }

    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> ModelResult<ValueId> {
        let blen = numel(&self.slots[bias].shape);
        if numel(&self.slots[x].shape) % blen != 0 {
            return Err(ModelError::TapeShape {
                op: "add_bias",
                detail: format!("{:?} + bias of {blen}", self.slots[x].shape),
            });
        }
        let shape = self.slots[x].shape.clone();
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::AddBias { x, bias, y };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn scale_channels(&mut self, x: ValueId, gain: ValueId) -> ModelResult<ValueId> {
        let glen = numel(&self.slots[gain].shape);
        if last_dim(&self.slots[x].shape) != glen {
            return Err(ModelError::TapeShape {
                op: "scale_channels",
                detail: format!("{:?} * gain of {glen}", self.slots[x].shape),
            });
        }
        let shape = self.slots[x].shape.clone();
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::ScaleChannels { x, gain, y };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn softmax_last(&mut self, x: ValueId) -> ValueId {
        let shape = self.slots[x].shape.clone();
        let last = last_dim(&shape);
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::SoftmaxLast { x, y, last };
        self.eval_forward(&op);
        self.ops.push(op);
        y
    }

    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    ) -> ModelResult<ValueId> {
        let last = last_dim(&self.slots[x].shape);
        if numel(&self.slots[gamma].shape) != last || numel(&self.slots[beta].shape) != last {
            return Err(ModelError::TapeShape {
                op: "layer_norm",
                detail: format!(
                    "dim {last}, gamma {:?}, beta {:?}",
                    self.slots[gamma].shape, self.slots[beta].shape
                ),
            });
        }
        let shape = self.slots[x].shape.clone();
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::LayerNorm { x, gamma, beta, y, eps, last };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn normalize_rows(&mut self, x: ValueId, eps: f64) -> ValueId {
        let shape = self.slots[x].shape.clone();
        let last = last_dim(&shape);
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::NormalizeRows { x, y, eps, last };
        self.eval_forward(&op);
        self.ops.push(op);
        y
    }

    pub fn gelu(&mut self, x: ValueId) -> ValueId {
        let shape = self.slots[x].shape.clone();
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::Gelu { x, y };
        self.eval_forward(&op);
        self.ops.push(op);
        y
    }

    pub fn mean_tokens(&mut self, x: ValueId) -> ModelResult<ValueId> {
        let s = &self.slots[x].shape;
        if s.len() != 3 {
            return Err(ModelError::TapeShape { op: "mean_tokens", detail: format!("{s:?}") });
        }
        let shape = vec![s[0], s[2]];
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::MeanTokens { x, y };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn concat_last(&mut self, parts: &[ValueId]) -> ModelResult<ValueId> {
        let first = parts.first().ok_or(ModelError::TapeShape {
            op: "concat_last",
            detail: "no parts".into(),
        })?;
        let lead = self.slots[*first].shape[..self.slots[*first].shape.len() - 1].to_vec();
        let mut total_last = 0;
        for p in parts {
            let s = &self.slots[*p].shape;
            if s[..s.len() - 1] != lead[..] {
                return Err(ModelError::TapeShape {
                    op: "concat_last",
                    detail: format!("leading dims differ: {lead:?} vs {s:?}"),
                });
            }
            total_last += last_dim(s);
        }
        let mut shape = lead;
        shape.push(total_last);
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::ConcatLast { parts: parts.to_vec(), y };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn gate_rows(&mut self, x: ValueId, gates: Vec<f64>) -> ModelResult<ValueId> {
        let s = &self.slots[x].shape;
        if s.is_empty() || s[0] != gates.len() {
            return Err(ModelError::TapeShape {
                op: "gate_rows",
                detail: format!("{} gates for shape {s:?}", gates.len()),
            });
        }
        let shape = s.clone();
        let y = self.push(vec![0.0; numel(&shape)], shape, false);
        let op = Op::GateRows { x, gates, y };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn cross_entropy_mean(&mut self, logits: ValueId, labels: &[usize]) -> ModelResult<ValueId> {
        let s = &self.slots[logits].shape;
        if s.len() != 2 || s[0] != labels.len() {
            return Err(ModelError::TapeShape {
                op: "cross_entropy_mean",
                detail: format!("logits {s:?}, {} labels", labels.len()),
            });
        }
        let classes = s[1];
        if let Some(bad) = labels.iter().position(|l| *l >= classes) {
            return Err(ModelError::Data(format!(
                "label {} at index {bad} out of range for {classes} classes",
                labels[bad]
            )));
        }
        let y = self.push(vec![0.0], vec![], false);
        let op = Op::CrossEntropyMean { logits, labels: labels.to_vec(), y };
        self.eval_forward(&op);
        self.ops.push(op);
        Ok(y)
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let y = self.push(vec![0.0], vec![], false);
        let op = Op::SumAll { x, y };
        self.eval_forward(&op);
        self.ops.push(op);
        y
    }

    // ---- forward evaluation --------------------------------------------

    fn eval_forward(&mut self, op: &Op) {
        match op {
            Op::Matmul { x, w, y } => {
                let k = self.slots[*w].shape[0];
                let m = self.slots[*w].shape[1];
                let rows = numel(&self.slots[*x].shape) / k;
                let out = matmul_rows(&self.slots[*x].data, &self.slots[*w].data, rows, k, m);
                self.slots[*y].data = out;
            }
            Op::BmmNn { a, b, y } => {
                let [bs, m, k] = three(&self.slots[*a].shape);
                let n = self.slots[*b].shape[2];
                let out =
                    bmm_nn_raw(&self.slots[*a].data, &self.slots[*b].data, bs, m, k, n);
                self.slots[*y].data = out;
            }
            Op::BmmNt { a, b, y } => {
                let [bs, m, k] = three(&self.slots[*a].shape);
                let n = self.slots[*b].shape[1];
                let out =
                    bmm_nt_raw(&self.slots[*a].data, &self.slots[*b].data, bs, m, k, n);
                self.slots[*y].data = out;
            }
            Op::Add { a, b, y } => {
                let out: Vec<f64> = self.slots[*a]
                    .data
                    .iter()
                    .zip(&self.slots[*b].data)
                    .map(|(p, q)| p + q)
                    .collect();
                self.slots[*y].data = out;
            }
            Op::Sub { a, b, y } => {
                let out: Vec<f64> = self.slots[*a]
                    .data
                    .iter()
                    .zip(&self.slots[*b].data)
                    .map(|(p, q)| p - q)
                    .collect();
                self.slots[*y].data = out;
            }
            Op::Scale { x, c, y } => {
                let out: Vec<f64> = self.slots[*x].data.iter().map(|v| v * c).collect();
                self.slots[*y].data = out;
            }
            Op::AddBias { x, bias, y } => {
                let blen = self.slots[*bias].data.len();
                let mut out = self.slots[*x].data.clone();
                for chunk in out.chunks_mut(blen) {
                    for (v, b) in chunk.iter_mut().zip(&self.slots[*bias].data) {
                        *v += b;
                    }
                }
                self.slots[*y].data = out;
            }
            Op::ScaleChannels { x, gain, y } => {
                let glen = self.slots[*gain].data.len();
                let mut out = self.slots[*x].data.clone();
                for chunk in out.chunks_mut(glen) {
                    for (v, g) in chunk.iter_mut().zip(&self.slots[*gain].data) {
                        *v *= g;
                    }
                }
                self.slots[*y].data = out;
            }
            Op::SoftmaxLast { x, y, last } => {
                let mut out = self.slots[*x].data.clone();
                for row in out.chunks_mut(*last) {
                    lapform_core::softmax_slice(row);
                }
                self.slots[*y].data = out;
            }
            Op::LayerNorm { x, gamma, beta, y, eps, last } => {
                let mut out = self.slots[*x].data.clone();
                for row in out.chunks_mut(*last) {
                    lapform_core::layer_norm_slice(
                        row,
                        &self.slots[*gamma].data,
                        &self.slots[*beta].data,
                        *eps,
                    );
                }
                self.slots[*y].data = out;
            }
            Op::NormalizeRows { x, y, eps, last } => {
                let mut out = self.slots[*x].data.clone();
                for row in out.chunks_mut(*last) {
                    let norm = (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
                    for v in row {
                        *v /= norm;
                    }
                }
                self.slots[*y].data = out;
            }
            Op::Gelu { x, y } => {
                let out: Vec<f64> = self.slots[*x].data.iter().map(|v| gelu(*v)).collect();
                self.slots[*y].data = out;
            }
            Op::MeanTokens { x, y } => {
                let [bs, t, d] = three(&self.slots[*x].shape);
                let mut out = vec![0.0; bs * d];
                for b in 0..bs {
                    for tok in 0..t {
                        let base = (b * t + tok) * d;
                        for j in 0..d {
                            out[b * d + j] += self.slots[*x].data[base + j];
                        }
                    }
                }
                let inv = 1.0 / t as f64;
                for v in &mut out {
                    *v *= inv;
                }
                self.slots[*y].data = out;
            }
            Op::ConcatLast { parts, y } => {
                let widths: Vec<usize> =
                    parts.iter().map(|p| last_dim(&self.slots[*p].shape)).collect();
                let total: usize = widths.iter().sum();
                let rows = numel(&self.slots[*y].shape) / total;
                let mut out = vec![0.0; rows * total];
                let mut offset = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    for r in 0..rows {
                        out[r * total + offset..r * total + offset + w]
                            .copy_from_slice(&self.slots[*p].data[r * w..(r + 1) * w]);
                    }
                    offset += w;
                }
                self.slots[*y].data = out;
            }
            Op::GateRows { x, gates, y } => {
                let stride = self.slots[*x].data.len() / gates.len();
                let mut out = self.slots[*x].data.clone();
                for (b, g) in gates.iter().enumerate() {
                    for v in &mut out[b * stride..(b + 1) * stride] {
                        *v *= g;
                    }
                }
                self.slots[*y].data = out;
            }
            Op::CrossEntropyMean { logits, labels, y } => {
                let classes = self.slots[*logits].shape[1];
                let mut total = 0.0;
                for (i, label) in labels.iter().enumerate() {
                    let row = &self.slots[*logits].data[i * classes..(i + 1) * classes];
                    total += log_sum_exp(row) - row[*label];
                }
                self.slots[*y].data = vec![total / labels.len() as f64];
            }
            Op::SumAll { x, y } => {
                self.slots[*y].data = vec![self.slots[*x].data.iter().sum()];
            }
        }
    }

    // ---- backward -------------------------------------------------------

    /// Accumulates d(loss)/d(slot) for every slot feeding the scalar `loss`,
    /// walking the record in reverse topological order.
    pub fn backward(&self, loss: ValueId) -> ModelResult<Gradients> {
        if numel(&self.slots[loss].shape) != 1 {
            return Err(ModelError::TapeShape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.slots[loss].shape),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.slots.len()];
        grads[loss] = Some(vec![1.0]);

        for op in self.ops.iter().rev() {
            self.backward_op(op, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: ValueId, len: usize) -> &mut Vec<f64> {
        grads[id].get_or_insert_with(|| vec![0.0; len])
    }

    fn backward_op(&self, op: &Op, grads: &mut Vec<Option<Vec<f64>>>) {
        match op {
            Op::Matmul { x, w, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let k = self.slots[*w].shape[0];
                let m = self.slots[*w].shape[1];
                let rows = numel(&self.slots[*x].shape) / k;
                // dX = dY W^T
                {
                    let wdata = &self.slots[*w].data;
                    let dx = Self::accumulate(grads, *x, rows * k);
                    for r in 0..rows {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            let wrow = &wdata[kk * m..(kk + 1) * m];
                            let dyrow = &dy[r * m..(r + 1) * m];
                            for (wv, dv) in wrow.iter().zip(dyrow) {
                                acc += wv * dv;
                            }
                            dx[r * k + kk] += acc;
                        }
                    }
                }
                // dW = X^T dY
                {
                    let xdata = &self.slots[*x].data;
                    let dw = Self::accumulate(grads, *w, k * m);
                    for r in 0..rows {
                        let xrow = &xdata[r * k..(r + 1) * k];
                        let dyrow = &dy[r * m..(r + 1) * m];
                        for (kk, xv) in xrow.iter().enumerate() {
                            if *xv == 0.0 {
                                continue;
                            }
                            let drow = &mut dw[kk * m..(kk + 1) * m];
                            for (dwv, dyv) in drow.iter_mut().zip(dyrow) {
                                *dwv += xv * dyv;
                            }
                        }
                    }
                }
            }
            Op::BmmNn { a, b, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let [bs, m, k] = three(&self.slots[*a].shape);
                let n = self.slots[*b].shape[2];
                // dA = dY B^T
                let da_new = bmm_nt_raw(&dy, &self.slots[*b].data, bs, m, n, k);
                add_into(Self::accumulate(grads, *a, bs * m * k), &da_new);
                // dB = A^T dY
                let db_new = bmm_tn_raw(&self.slots[*a].data, &dy, bs, m, k, n);
                add_into(Self::accumulate(grads, *b, bs * k * n), &db_new);
            }
            Op::BmmNt { a, b, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let [bs, m, k] = three(&self.slots[*a].shape);
                let n = self.slots[*b].shape[1];
                // Y = A B^T: dA = dY B, dB = dY^T A
                let da_new = bmm_nn_raw(&dy, &self.slots[*b].data, bs, m, n, k);
                add_into(Self::accumulate(grads, *a, bs * m * k), &da_new);
                let db_new = bmm_tn_raw(&dy, &self.slots[*a].data, bs, m, n, k);
                add_into(Self::accumulate(grads, *b, bs * n * k), &db_new);
            }
            Op::Add { a, b, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                add_into(Self::accumulate(grads, *a, dy.len()), &dy);
                add_into(Self::accumulate(grads, *b, dy.len()), &dy);
            }
            Op::Sub { a, b, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                add_into(Self::accumulate(grads, *a, dy.len()), &dy);
                let db = Self::accumulate(grads, *b, dy.len());
                for (g, d) in db.iter_mut().zip(&dy) {
                    *g -= d;
                }
            }
            Op::Scale { x, c, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let dx = Self::accumulate(grads, *x, dy.len());
                for (g, d) in dx.iter_mut().zip(&dy) {
                    *g += c * d;
                }
            }
            Op::AddBias { x, bias, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                add_into(Self::accumulate(grads, *x, dy.len()), &dy);
                let blen = self.slots[*bias].data.len();
                let db = Self::accumulate(grads, *bias, blen);
                for chunk in dy.chunks(blen) {
                    for (g, d) in db.iter_mut().zip(chunk) {
                        *g += d;
                    }
                }
            }
            Op::ScaleChannels { x, gain, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let glen = self.slots[*gain].data.len();
                {
                    let gain_data = &self.slots[*gain].data;
                    let dx = Self::accumulate(grads, *x, dy.len());
                    for (chunk, dchunk) in dx.chunks_mut(glen).zip(dy.chunks(glen)) {
                        for ((g, d), gv) in chunk.iter_mut().zip(dchunk).zip(gain_data) {
                            *g += d * gv;
                        }
                    }
                }
                {
                    let xdata = &self.slots[*x].data;
                    let dg = Self::accumulate(grads, *gain, glen);
                    for (xchunk, dchunk) in xdata.chunks(glen).zip(dy.chunks(glen)) {
                        for ((g, d), xv) in dg.iter_mut().zip(dchunk).zip(xchunk) {
                            *g += d * xv;
                        }
                    }
                }
            }
            Op::SoftmaxLast { x, y, last } => {
                let Some(dy) = grads[*y].clone() else { return };
                let ydata = &self.slots[*y].data;
                let dx = Self::accumulate(grads, *x, dy.len());
                for ((drow, yrow), dxrow) in
                    dy.chunks(*last).zip(ydata.chunks(*last)).zip(dx.chunks_mut(*last))
                {
                    let dot: f64 = drow.iter().zip(yrow).map(|(d, s)| d * s).sum();
                    for ((dxv, d), s) in dxrow.iter_mut().zip(drow).zip(yrow) {
                        *dxv += s * (d - dot);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, y, eps, last } => {
                let Some(dy) = grads[*y].clone() else { return };
                let d = *last;
                let inv_d = 1.0 / d as f64;
                let xdata = self.slots[*x].data.clone();
                let gamma_data = self.slots[*gamma].data.clone();

                // d/d beta and d/d gamma.
                {
                    let db = Self::accumulate(grads, *beta, d);
                    for drow in dy.chunks(d) {
                        for (g, dv) in db.iter_mut().zip(drow) {
                            *g += dv;
                        }
                    }
                }
                {
                    let dg = Self::accumulate(grads, *gamma, d);
                    for (xrow, drow) in xdata.chunks(d).zip(dy.chunks(d)) {
                        let mean = xrow.iter().sum::<f64>() * inv_d;
                        let var =
                            xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        for ((g, dv), xv) in dg.iter_mut().zip(drow).zip(xrow) {
                            *g += dv * (xv - mean) * inv_std;
                        }
                    }
                }
                // d/d x: (1/sigma) * (g - mean(g) - xhat * mean(g .* xhat)),
                // with g = gamma .* dy.
                {
                    let dx = Self::accumulate(grads, *x, dy.len());
                    for ((xrow, drow), dxrow) in
                        xdata.chunks(d).zip(dy.chunks(d)).zip(dx.chunks_mut(d))
                    {
                        let mean = xrow.iter().sum::<f64>() * inv_d;
                        let var =
                            xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let mut g_mean = 0.0;
                        let mut gx_mean = 0.0;
                        for ((dv, gm), xv) in drow.iter().zip(&gamma_data).zip(xrow) {
                            let g = dv * gm;
                            g_mean += g;
                            gx_mean += g * (xv - mean) * inv_std;
                        }
                        g_mean *= inv_d;
                        gx_mean *= inv_d;
                        for ((dxv, (dv, gm)), xv) in
                            dxrow.iter_mut().zip(drow.iter().zip(&gamma_data)).zip(xrow)
                        {
                            let xhat = (xv - mean) * inv_std;
                            *dxv += inv_std * (dv * gm - g_mean - xhat * gx_mean);
                        }
                    }
                }
            }
            Op::NormalizeRows { x, y, eps, last } => {
                let Some(dy) = grads[*y].clone() else { return };
                let xdata = &self.slots[*x].data;
                let dx = Self::accumulate(grads, *x, dy.len());
                for ((xrow, drow), dxrow) in
                    xdata.chunks(*last).zip(dy.chunks(*last)).zip(dx.chunks_mut(*last))
                {
                    let norm_sq = xrow.iter().map(|v| v * v).sum::<f64>() + eps;
                    let norm = norm_sq.sqrt();
                    let dot: f64 = xrow.iter().zip(drow).map(|(a, b)| a * b).sum();
                    let coeff = dot / (norm_sq * norm);
                    for ((dxv, dv), xv) in dxrow.iter_mut().zip(drow).zip(xrow) {
                        *dxv += dv / norm - xv * coeff;
                    }
                }
            }
            Op::Gelu { x, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let xdata = &self.slots[*x].data;
                let dx = Self::accumulate(grads, *x, dy.len());
                for ((g, d), xv) in dx.iter_mut().zip(&dy).zip(xdata) {
                    *g += d * gelu_grad(*xv);
                }
            }
            Op::MeanTokens { x, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let [bs, t, d] = three(&self.slots[*x].shape);
                let inv_t = 1.0 / t as f64;
                let dx = Self::accumulate(grads, *x, bs * t * d);
                for b in 0..bs {
                    for tok in 0..t {
                        let base = (b * t + tok) * d;
                        for j in 0..d {
                            dx[base + j] += dy[b * d + j] * inv_t;
                        }
                    }
                }
            }
            Op::ConcatLast { parts, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let widths: Vec<usize> =
                    parts.iter().map(|p| last_dim(&self.slots[*p].shape)).collect();
                let total: usize = widths.iter().sum();
                let rows = dy.len() / total;
                let mut offset = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    let dp = Self::accumulate(grads, *p, rows * w);
                    for r in 0..rows {
                        for j in 0..*w {
                            dp[r * w + j] += dy[r * total + offset + j];
                        }
                    }
                    offset += w;
                }
            }
            Op::GateRows { x, gates, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let stride = dy.len() / gates.len();
                let dx = Self::accumulate(grads, *x, dy.len());
                for (b, g) in gates.iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    for (dxv, dv) in
                        dx[b * stride..(b + 1) * stride].iter_mut().zip(&dy[b * stride..])
                    {
                        *dxv += g * dv;
                    }
                }
            }
            Op::CrossEntropyMean { logits, labels, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let dloss = dy[0];
                let classes = self.slots[*logits].shape[1];
                let inv_b = 1.0 / labels.len() as f64;
                let logit_data = &self.slots[*logits].data;
                let dl = Self::accumulate(grads, *logits, logit_data.len());
                for (i, label) in labels.iter().enumerate() {
                    let row = &logit_data[i * classes..(i + 1) * classes];
                    let mut probs = row.to_vec();
                    lapform_core::softmax_slice(&mut probs);
                    for (c, p) in probs.iter().enumerate() {
                        let indicator = if c == *label { 1.0 } else { 0.0 };
                        dl[i * classes + c] += dloss * inv_b * (p - indicator);
                    }
                }
            }
            Op::SumAll { x, y } => {
                let Some(dy) = grads[*y].clone() else { return };
                let len = self.slots[*x].data.len();
                let dx = Self::accumulate(grads, *x, len);
                for g in dx.iter_mut() {
                    *g += dy[0];
                }
            }
        }
    }

    /// Gradient vectors for a list of (typically trainable) slots.
    pub fn extract(&self, grads: &mut Gradients, ids: &[ValueId]) -> Vec<Vec<f64>> {
        ids.iter()
            .map(|id| {
                grads
                    .take(*id)
                    .unwrap_or_else(|| vec![0.0; self.slots[*id].data.len()])
            })
            .collect()
    }

    pub fn is_trainable(&self, id: ValueId) -> bool {
        self.slots[id].trainable
    }
}

fn three(shape: &[usize]) -> [usize; 3] {
    [shape[0], shape[1], shape[2]]
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn matmul_rows(x: &[f64], w: &[f64], rows: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * m];
    for r in 0..rows {
        let xrow = &x[r * k..(r + 1) * k];
        let orow = &mut out[r * m..(r + 1) * m];
        for (kk, xv) in xrow.iter().enumerate() {
            if *xv == 0.0 {
                continue;
            }
            let wrow = &w[kk * m..(kk + 1) * m];
            for (o, wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    out
}

fn bmm_nn_raw(a: &[f64], b: &[f64], bs: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; bs * m * n];
    for batch in 0..bs {
        let abase = batch * m * k;
        let bbase = batch * k * n;
        let obase = batch * m * n;
        for i in 0..m {
            for kk in 0..k {
                let av = a[abase + i * k + kk];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[bbase + kk * n..bbase + (kk + 1) * n];
                let orow = &mut out[obase + i * n..obase + (i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

/// out[batch] = a[batch] (m x k) * b[batch]^T where b is [bs, n, k].
fn bmm_nt_raw(a: &[f64], b: &[f64], bs: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; bs * m * n];
    for batch in 0..bs {
        let abase = batch * m * k;
        let bbase = batch * n * k;
        let obase = batch * m * n;
        for i in 0..m {
            let arow = &a[abase + i * k..abase + (i + 1) * k];
            for j in 0..n {
                let brow = &b[bbase + j * k..bbase + (j + 1) * k];
                let mut acc = 0.0;
                for (av, bv) in arow.iter().zip(brow) {
                    acc += av * bv;
                }
                out[obase + i * n + j] = acc;
            }
        }
    }
    out
}

/// out[batch] = a[batch]^T (k x m -> from [bs, m, k]) * b[batch] ([bs, m, n]),
/// giving [bs, k, n].
fn bmm_tn_raw(a: &[f64], b: &[f64], bs: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; bs * k * n];
    for batch in 0..bs {
        let abase = batch * m * k;
        let bbase = batch * m * n;
        let obase = batch * k * n;
        for i in 0..m {
            let arow = &a[abase + i * k..abase + (i + 1) * k];
            let brow = &b[bbase + i * n..bbase + (i + 1) * n];
            for (kk, av) in arow.iter().enumerate() {
                if *av == 0.0 {
                    continue;
                }
                let orow = &mut out[obase + kk * n..obase + (kk + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}
