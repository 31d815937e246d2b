//! AdamW with decoupled weight decay, global-norm clipping, and the
//! warmup-then-cosine learning-rate schedule.

use crate::error::{ModelError, ModelResult};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 0.05, grad_clip: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        let m = params.params().iter().map(|p| vec![0.0; p.data.len()]).collect::<Vec<_>>();
        let v = m.clone();
        Self { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Rescales all gradients in place so their joint Euclidean norm is at most
/// `clip`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], clip: f64) -> f64 {
    let norm_sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum();
    let norm = norm_sq.sqrt();
    if clip > 0.0 && norm > clip {
        let scale = clip / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One AdamW update. Order: clip the global gradient norm, apply decoupled
/// weight decay, update the moments, then the bias-corrected step.
pub fn adamw_step(
    state: &mut OptimizerState,
    params: &mut ParamSet,
    grads: &mut [Vec<f64>],
    hyper: &AdamHyper,
    lr: f64,
) -> ModelResult<f64> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(ModelError::Internal(format!(
            "gradient/parameter count mismatch: {} grads, {} params, {} moments",
            grads.len(),
            params.len(),
            state.m.len()
        )));
    }
    let norm = clip_global_norm(grads, hyper.grad_clip);

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let decay = 1.0 - lr * hyper.weight_decay;

    for ((param, grad), (m, v)) in params
        .params_mut()
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if grad.len() != param.data.len() {
            return Err(ModelError::Internal(format!(
                "gradient for {} has {} entries, parameter has {}",
                param.name,
                grad.len(),
                param.data.len()
            )));
        }
        for ((p, g), (mi, vi)) in
            param.data.iter_mut().zip(grad).zip(m.iter_mut().zip(v.iter_mut()))
        {
            *p *= decay;
            *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * g;
            *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub start: f64,
    pub peak: f64,
    pub min: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

/// Linear warmup from `start` to `peak`, cosine decay to `min`, flat `min`
/// past `total_steps`.
pub fn lr_at(step: u64, sched: &LrSchedule) -> f64 {
    if step < sched.warmup_steps {
        let frac = step as f64 / sched.warmup_steps as f64;
        return sched.start + (sched.peak - sched.start) * frac;
    }
    if step >= sched.total_steps {
        return sched.min;
    }
    let span = (sched.total_steps - sched.warmup_steps) as f64;
    let t = (step - sched.warmup_steps) as f64 / span;
    sched.min + (sched.peak - sched.min) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}
