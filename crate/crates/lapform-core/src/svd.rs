//! Thin SVD via one-sided (Hestenes) Jacobi rotations. Matrices here are at
//! most a few hundred per side, where Jacobi's robustness and simplicity beat
//! anything asymptotically faster.

use crate::error::{CoreError, CoreResult};
use crate::matrix::Matrix;

/// Thin factorization `M = U * diag(S) * Vt` with `r = min(rows, cols)`:
/// `U` is `rows x r` with orthonormal columns, `S` is nonincreasing and
/// nonnegative, `Vt` is `r x cols` with orthonormal rows.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

const MAX_SWEEPS: usize = 60;
/// Column pairs whose normalized inner product is below this count as
/// orthogonal; roughly 100x machine epsilon.
const ORTH_TOL: f64 = 1e-14;

pub fn thin_svd(m: &Matrix) -> CoreResult<ThinSvd> {
    m.validate_finite("thin_svd input")?;
    if m.rows() == 0 || m.cols() == 0 {
        return Err(CoreError::InvalidArgument {
            op: "thin_svd",
            detail: "matrix must have at least one row and one column".into(),
        });
    }
    if m.rows() >= m.cols() {
        jacobi_tall(m)
    } else {
        // M = U S Vt  <=>  M^T = V S U^T; factor the tall transpose and swap.
        let t = jacobi_tall(&m.transpose())?;
        Ok(ThinSvd { u: t.vt.transpose(), s: t.s, vt: t.u.transpose() })
    }
}

/// One-sided Jacobi on a tall (rows >= cols) matrix: rotate column pairs of a
/// working copy until all pairs are orthogonal; singular values are the final
/// column norms and V accumulates the rotations.
fn jacobi_tall(m: &Matrix) -> CoreResult<ThinSvd> {
    let (rows, cols) = (m.rows(), m.cols());

    // Column-major working copies: a[j] is column j.
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| m.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let app = dot(&a[p], &a[p]);
                let aqq = dot(&a[q], &a[q]);
                let apq = dot(&a[p], &a[q]);
                if apq.abs() <= ORTH_TOL * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                // Classic stable rotation solving for tan of the half angle.
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        let mut residual = 0.0_f64;
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let denom = (dot(&a[p], &a[p]) * dot(&a[q], &a[q])).sqrt();
                if denom > 0.0 {
                    residual = residual.max(dot(&a[p], &a[q]).abs() / denom);
                }
            }
        }
        return Err(CoreError::SvdConvergence { sweeps: MAX_SWEEPS, residual });
    }

    // Singular values are the rotated column norms, sorted nonincreasing.
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let rank_floor = s[0] * f64::EPSILON * rows.max(cols) as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for (k, &j) in order.iter().enumerate() {
        if s[k] > rank_floor && s[k] > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(complete_orthonormal(&u_cols, rows));
        }
    }

    let mut u = Matrix::zeros(rows, cols);
    for (j, col) in u_cols.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            u.set(i, j, *x);
        }
    }
    let mut vt = Matrix::zeros(cols, cols);
    for (r_out, &j) in order.iter().enumerate() {
        for i in 0..cols {
            vt.set(r_out, i, v[j][i]);
        }
    }
    Ok(ThinSvd { u, s, vt })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = c * *x - s * *y;
        let yq = s * *x + c * *y;
        *x = xp;
        *y = yq;
    }
}

/// A unit vector orthogonal to all of `existing`, found by Gram-Schmidt on
/// canonical basis vectors. Exists whenever `existing.len() < dim`.
fn complete_orthonormal(existing: &[Vec<f64>], dim: usize) -> Vec<f64> {
    for seed in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[seed] = 1.0;
        for col in existing {
            let proj: f64 = cand.iter().zip(col).map(|(a, b)| a * b).sum();
            for (c, e) in cand.iter_mut().zip(col) {
                *c -= proj * e;
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            for c in &mut cand {
                *c /= norm;
            }
            return cand;
        }
    }
    unreachable!("orthonormal completion requested with no dimensions left");
}
