//! Minibatch training: shuffled epochs, taped gradients, AdamW, and
//! plain-path evaluation after every epoch.

use lapform_core::RngState;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{ModelError, ModelResult};
use crate::head::HeadKind;
use crate::model::{build_loss_tape, cross_entropy, model_eval, DropMasks, InputBatch};
use crate::optim::{adamw_step, lr_at, AdamHyper, LrSchedule, OptimizerState};
use crate::params::ParamSet;

/// Stream tags splitting one run seed into independent substreams.
const SHUFFLE_STREAM: u64 = 1;
const DROP_PATH_STREAM: u64 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_start: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr_peak: 3e-4,
            lr_start: 3e-6,
            lr_min: 0.0,
            warmup_epochs: 5,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            weight_decay: 0.05,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> ModelResult<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("epochs and batch_size must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(ModelError::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        for (name, v) in
            [("lr_peak", self.lr_peak), ("lr_start", self.lr_start), ("lr_min", self.lr_min)]
        {
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean minibatch loss seen during the epoch's updates.
    pub step_loss: f64,
    /// Full-set loss/accuracy in evaluation mode after the epoch.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    /// Learning rate of the last update in the epoch.
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub params: ParamSet,
    pub metrics: Vec<EpochMetrics>,
    pub trace: Vec<Vec<HeadKind>>,
}

/// Evaluation-mode loss and accuracy over a whole set, in chunks.
pub fn evaluate(
    cfg: &ModelConfig,
    params: &ParamSet,
    input: &InputBatch,
    labels: &[usize],
    chunk: usize,
) -> ModelResult<(f64, f64)> {
    if labels.is_empty() || input.len() != labels.len() {
        return Err(ModelError::Data("evaluation set is empty or mismatched".into()));
    }
    let chunk = chunk.max(1);
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    let indices: Vec<usize> = (0..labels.len()).collect();
    for ids in indices.chunks(chunk) {
        let part = input.select(ids);
        let part_labels: Vec<usize> = ids.iter().map(|i| labels[*i]).collect();
        let logits = model_eval(cfg, params, &part)?;
        loss_sum += cross_entropy(&logits, &part_labels)? * ids.len() as f64;
        for (r, label) in part_labels.iter().enumerate() {
            let row = logits.row(r);
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
    }
    Ok((loss_sum / labels.len() as f64, hits as f64 / labels.len() as f64))
}

/// Trains from a fresh seed-derived initialization. The run seed splits into
/// three independent streams (parameter init, epoch shuffling, drop-path) so
/// any one can be varied without disturbing the others.
pub fn train(
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_input: &InputBatch,
    train_labels: &[usize],
    test_set: Option<(&InputBatch, &[usize])>,
    seed: u64,
) -> ModelResult<TrainResult> {
    cfg.validate()?;
    train_cfg.validate()?;
    let n = train_labels.len();
    if n == 0 || train_input.len() != n {
        return Err(ModelError::Data(format!(
            "training set has {} inputs for {n} labels",
            train_input.len()
        )));
    }

    let mut params = ParamSet::init(cfg, seed)?;
    let mut state = OptimizerState::new(&params);
    let mut shuffle_rng = RngState::new(seed).derive(SHUFFLE_STREAM);
    let mut drop_rng = RngState::new(seed).derive(DROP_PATH_STREAM);

    let steps_per_epoch = n.div_ceil(train_cfg.batch_size) as u64;
    let sched = LrSchedule {
        start: train_cfg.lr_start,
        peak: train_cfg.lr_peak,
        min: train_cfg.lr_min,
        warmup_steps: train_cfg.warmup_epochs as u64 * steps_per_epoch,
        total_steps: train_cfg.epochs as u64 * steps_per_epoch,
    };
    let hyper = train_cfg.adam();
    let trace = cfg.assignment()?.per_layer;

    let mut metrics = Vec::with_capacity(train_cfg.epochs);
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 1..=train_cfg.epochs {
        shuffle_rng.shuffle(&mut indices);
        let mut step_loss_sum = 0.0;
        let mut steps = 0usize;
        let mut last_lr = 0.0;
        for ids in indices.chunks(train_cfg.batch_size) {
            let batch_input = train_input.select(ids);
            let batch_labels: Vec<usize> = ids.iter().map(|i| train_labels[*i]).collect();
            let masks = if cfg.drop_path_p > 0.0 {
                Some(DropMasks::draw(cfg, ids.len(), &mut drop_rng))
            } else {
                None
            };
            let taped =
                build_loss_tape(cfg, &params, &batch_input, &batch_labels, masks.as_ref())?;
            let loss = taped.tape.scalar(taped.loss)?;
            if !loss.is_finite() {
                return Err(ModelError::Training {
                    epoch,
                    detail: format!("non-finite loss {loss} at step {}", state.step_count()),
                });
            }
            let mut all = taped.tape.backward(taped.loss)?;
            let mut grads = taped.tape.extract(&mut all, &taped.param_ids);
            last_lr = lr_at(state.step_count(), &sched);
            adamw_step(&mut state, &mut params, &mut grads, &hyper, last_lr)?;
            step_loss_sum += loss;
            steps += 1;
        }

        let (train_loss, train_acc) =
            evaluate(cfg, &params, train_input, train_labels, train_cfg.batch_size)?;
        let (test_loss, test_acc) = match test_set {
            Some((ti, tl)) => {
                let (l, a) = evaluate(cfg, &params, ti, tl, train_cfg.batch_size)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        if !train_loss.is_finite() {
            return Err(ModelError::Training {
                epoch,
                detail: format!("non-finite evaluation loss {train_loss}"),
            });
        }
        metrics.push(EpochMetrics {
            epoch,
            step_loss: step_loss_sum / steps.max(1) as f64,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            lr: last_lr,
        });
    }

    Ok(TrainResult { params, metrics, trace })
}
