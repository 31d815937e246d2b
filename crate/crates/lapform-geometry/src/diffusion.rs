//! Heat diffusion on the token graph defined by a row-stochastic attention
//! matrix, and the check that a stripped-down complement-attention block
//! performs exactly one diffusion step.

use lapform_core::{Matrix, RngState, TokenBatch};
use lapform_model::{
    attention_weights, encoder_block, AttentionParams, BlockParams, HeadKind, HeadParams,
    LayerNormParams, MlpParams,
};
use serde::Serialize;

use crate::collapse::cossim;
use crate::error::{GeometryError, GeometryResult};

const STOCHASTIC_TOL: f64 = 1e-12;

/// `L = I - P` for a row-stochastic `P`. Rejects matrices whose rows do not
/// sum to 1 or that carry meaningfully negative entries.
pub fn graph_laplacian(p: &Matrix) -> GeometryResult<Matrix> {
    check_row_stochastic(p)?;
    let t = p.rows();
    let mut l = Matrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            let delta = if i == j { 1.0 } else { 0.0 };
            l.row_mut(i)[j] = delta - p.get(i, j);
        }
    }
    Ok(l)
}

fn check_row_stochastic(p: &Matrix) -> GeometryResult<()> {
    if p.rows() != p.cols() {
        return Err(GeometryError::Data(format!(
            "transition matrix must be square, got {}x{}",
            p.rows(),
            p.cols()
        )));
    }
    let mut worst = 0.0_f64;
    for i in 0..p.rows() {
        let row = p.row(i);
        if let Some(neg) = row.iter().find(|v| **v < -STOCHASTIC_TOL) {
            return Err(GeometryError::Data(format!(
                "transition matrix has negative entry {neg} in row {i}"
            )));
        }
        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    if worst > STOCHASTIC_TOL {
        return Err(GeometryError::Data(format!(
            "rows of the transition matrix must sum to 1 (worst deviation {worst:.3e})"
        )));
    }
    Ok(())
}

/// One explicit Euler step of `dx/dt = -L x`: returns `x - dt * (x - P x)`.
///
/// At `dt = 1` this reduces to `P x` and is computed as exactly that product,
/// so the step agrees bit for bit with a plain averaging pass.
pub fn heat_step(x: &Matrix, p: &Matrix, dt: f64) -> GeometryResult<Matrix> {
    check_row_stochastic(p)?;
    if p.rows() != x.rows() {
        return Err(GeometryError::Data(format!(
            "transition matrix is {}x{} but the state has {} rows",
            p.rows(),
            p.cols(),
            x.rows()
        )));
    }
    let px = p.matmul(x)?;
    if dt == 1.0 {
        return Ok(px);
    }
    let mut out = x.clone();
    for (o, (xv, pv)) in out.data_mut().iter_mut().zip(x.data().iter().zip(px.data())) {
        *o = *xv - dt * (*xv - *pv);
    }
    Ok(out)
}

/// Largest distance of any row from the mean row: the radius of the state
/// around its consensus point. Zero iff all rows are identical.
pub fn row_spread(x: &Matrix) -> f64 {
    let (t, d) = (x.rows(), x.cols());
    if t == 0 {
        return 0.0;
    }
    let mut mean = vec![0.0; d];
    for i in 0..t {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let mut worst = 0.0_f64;
    for i in 0..t {
        let dist: f64 =
            x.row(i).iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>().sqrt();
        worst = worst.max(dist);
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub row_spread: f64,
    pub cossim: f64,
}

/// Runs `steps` heat steps from `x0`, recording spread and mean pairwise
/// cosine after every step (including step 0). Returns the final state and
/// the `steps + 1` recorded points.
pub fn heat_trajectory(
    x0: &Matrix,
    p: &Matrix,
    dt: f64,
    steps: usize,
) -> GeometryResult<(Matrix, Vec<TrajectoryPoint>)> {
    let mut x = x0.clone();
    let mut points = Vec::with_capacity(steps + 1);
    points.push(measure(0, &x)?);
    for step in 1..=steps {
        x = heat_step(&x, p, dt)?;
        points.push(measure(step, &x)?);
    }
    Ok((x, points))
}

fn measure(step: usize, x: &Matrix) -> GeometryResult<TrajectoryPoint> {
    let batch = TokenBatch::new(1, x.rows(), x.cols(), x.data().to_vec())?;
    Ok(TrajectoryPoint { step, row_spread: row_spread(x), cossim: cossim(&batch)? })
}

/// Maximum elementwise difference between one pass of a stripped encoder
/// block (single complement head, identity value map, negated identity
/// output map, LayerNorm bypassed, MLP zeroed) and one `dt = 1` heat step
/// with the attention weights of `x`.
///
/// Algebraically `x + (x - P x) * (-I)` is `P x`; the residual wiring only
/// reorders the same additions, so the difference stays at rounding level.
pub fn equivalence_check(x: &Matrix, w_q: &Matrix, w_k: &Matrix) -> GeometryResult<f64> {
    let (t, d) = (x.rows(), x.cols());
    if w_q.rows() != d || w_k.rows() != d || w_q.cols() != w_k.cols() {
        return Err(GeometryError::Data(format!(
            "projections must map dim {d} to a common key dim, got {}x{} and {}x{}",
            w_q.rows(),
            w_q.cols(),
            w_k.rows(),
            w_k.cols()
        )));
    }
    let d_k = w_q.cols();

    let params = BlockParams {
        ln1: LayerNormParams::identity_affine(d),
        attn: AttentionParams {
            heads: vec![HeadParams {
                w_q: w_q.clone(),
                w_k: w_k.clone(),
                w_v: Matrix::identity(d),
                q_gain: None,
                k_gain: None,
            }],
            w_o: Matrix::identity(d).scale(-1.0),
        },
        ln2: LayerNormParams::identity_affine(d),
        mlp: MlpParams {
            fc1_w: Matrix::zeros(d, 4 * d),
            fc1_b: vec![0.0; 4 * d],
            fc2_w: Matrix::zeros(4 * d, d),
            fc2_b: vec![0.0; d],
        },
        drop_path_p: 0.0,
        identity_layer_norm: true,
    };

    let batch = TokenBatch::new(1, t, d, x.data().to_vec())?;
    let mut rng = RngState::new(0);
    let block_out =
        encoder_block(&batch, &params, &[HeadKind::Laplacian], false, &mut rng)?.sequence(0);

    let p = attention_weights(x, w_q, w_k, d_k)?;
    let diffused = heat_step(x, &p, 1.0)?;

    let mut worst = 0.0_f64;
    for (a, b) in block_out.data().iter().zip(diffused.data()) {
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}
