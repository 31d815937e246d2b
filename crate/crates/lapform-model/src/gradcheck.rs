//! Central finite-difference verification of the taped gradients.

use crate::config::ModelConfig;
use crate::error::ModelResult;
use crate::model::{build_loss_tape, InputBatch};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Relative-error ceiling per entry.
    pub rel_tol: f64,
    /// Denominator floor guarding near-zero gradients.
    pub floor: f64,
    /// Cap on entries checked per parameter; 0 checks all of them.
    pub max_per_param: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-3, rel_tol: 1e-4, floor: 1e-6, max_per_param: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub fd_at_worst: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares every taped parameter gradient against a central finite
/// difference of the loss, re-running the recorded forward pass with each
/// entry nudged. Runs in evaluation mode (no drop-path gates).
pub fn grad_check(
    cfg: &ModelConfig,
    params: &ParamSet,
    input: &InputBatch,
    labels: &[usize],
    check: &GradCheckConfig,
) -> ModelResult<GradCheckReport> {
    let taped = build_loss_tape(cfg, params, input, labels, None)?;
    let mut tape = taped.tape;
    let mut grads = tape.backward(taped.loss)?;
    let analytic = tape.extract(&mut grads, &taped.param_ids);

    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        worst_rel: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        fd_at_worst: 0.0,
    };
    let h = check.step;

    for (pi, param) in params.params().iter().enumerate() {
        let id = taped.param_ids[pi];
        let n = if check.max_per_param == 0 {
            param.data.len()
        } else {
            param.data.len().min(check.max_per_param)
        };
        let mut work = param.data.clone();
        for e in 0..n {
            let base = work[e];
            work[e] = base + h;
            tape.set_leaf(id, &work)?;
            tape.replay_forward();
            let plus = tape.scalar(taped.loss)?;
            work[e] = base - h;
            tape.set_leaf(id, &work)?;
            tape.replay_forward();
            let minus = tape.scalar(taped.loss)?;
            work[e] = base;

            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[pi][e];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(check.floor);
            report.checked += 1;
            if rel > check.rel_tol {
                report.failures += 1;
            }
            if rel > report.worst_rel {
                report.worst_rel = rel;
                report.worst_param = param.name.clone();
                report.worst_index = e;
                report.analytic_at_worst = a;
                report.fd_at_worst = fd;
            }
        }
        // Restore the untouched values for the next parameter.
        tape.set_leaf(id, &param.data)?;
    }
    tape.replay_forward();
    Ok(report)
}
