//! Structure metrics of last-layer class geometry: equinorm/equiangular
//! spread of class means and classifier rows, classifier-to-means duality,
//! and agreement of the classifier with the nearest-mean rule.

use lapform_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, GeometryResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NcMetrics {
    /// Coefficient of variation of class-mean norms (0 = equinorm).
    pub equinorm_cov_means: f64,
    /// Coefficient of variation of classifier-row norms.
    pub equinorm_cov_weights: f64,
    /// Mean deviation of pairwise class-mean cosines from -1/(C-1)
    /// (0 = maximally equiangular).
    pub equiangularity_means: f64,
    /// Same deviation measured on the classifier rows.
    pub equiangularity_weights: f64,
    /// Squared Frobenius distance between the normalized classifier and the
    /// normalized centered means (0 = self-dual).
    pub self_duality: f64,
    /// Fraction of samples where the classifier argmax disagrees with the
    /// nearest class mean.
    pub ncc_mismatch: f64,
}

/// Computes the metric suite.
///
/// `class_means` holds one class per column (d x C), `classifier` is C x d,
/// `features` N x d, `logits` N x C. The norm and angle statistics read the
/// vectors as given; only the duality term centers the means around their
/// unweighted column mean, so pre-centered input changes nothing there.
pub fn nc_metrics(
    class_means: &Matrix,
    classifier: &Matrix,
    features: &Matrix,
    labels: &[usize],
    logits: &Matrix,
) -> GeometryResult<NcMetrics> {
    let (d, c) = (class_means.rows(), class_means.cols());
    let n = features.rows();
    if c < 2 {
        return Err(GeometryError::Data(format!("need at least 2 classes, got {c}")));
    }
    if classifier.rows() != c || classifier.cols() != d {
        return Err(GeometryError::Data(format!(
            "classifier is {}x{}, expected {c}x{d}",
            classifier.rows(),
            classifier.cols()
        )));
    }
    if features.cols() != d || labels.len() != n || logits.rows() != n || logits.cols() != c {
        return Err(GeometryError::Data(
            "features, labels, and logits disagree on sample count or shape".into(),
        ));
    }
    if let Some(bad) = labels.iter().position(|l| *l >= c) {
        return Err(GeometryError::Data(format!("label {} out of range", labels[bad])));
    }

    let mean_cols: Vec<Vec<f64>> =
        (0..c).map(|col| (0..d).map(|r| class_means.get(r, col)).collect()).collect();
    let weight_rows: Vec<Vec<f64>> = (0..c).map(|row| classifier.row(row).to_vec()).collect();

    let (equinorm_cov_means, equiangularity_means) = frame_stats(&mean_cols)
        .map_err(|which| GeometryError::Data(format!("class mean {which} has zero norm")))?;
    let (equinorm_cov_weights, equiangularity_weights) = frame_stats(&weight_rows)
        .map_err(|which| GeometryError::Data(format!("classifier row {which} has zero norm")))?;

    // Self-duality compares the classifier (transposed to d x C) with the
    // means centered around their unweighted column mean.
    let mut mu_g = vec![0.0; d];
    for col in &mean_cols {
        for (g, v) in mu_g.iter_mut().zip(col) {
            *g += v;
        }
    }
    for g in &mut mu_g {
        *g /= c as f64;
    }
    let centered: Vec<Vec<f64>> = mean_cols
        .iter()
        .map(|col| col.iter().zip(&mu_g).map(|(v, g)| v - g).collect())
        .collect();
    let m_fro = frobenius(&centered);
    if m_fro == 0.0 {
        return Err(GeometryError::Degenerate("centered class means are all zero".into()));
    }
    let w_fro = classifier.frobenius_norm();
    if w_fro == 0.0 {
        return Err(GeometryError::Degenerate("classifier has zero norm".into()));
    }
    let mut self_duality = 0.0;
    for col in 0..c {
        for r in 0..d {
            let diff = classifier.get(col, r) / w_fro - centered[col][r] / m_fro;
            self_duality += diff * diff;
        }
    }

    // Agreement between argmax of the logits and the nearest class mean.
    let mut mismatches = 0usize;
    for i in 0..n {
        let row = logits.row(i);
        let mut pred = 0usize;
        for (col, v) in row.iter().enumerate() {
            if *v > row[pred] {
                pred = col;
            }
        }
        let mut nearest = 0usize;
        let mut best = f64::INFINITY;
        for (col, mean) in mean_cols.iter().enumerate() {
            let dist: f64 = features
                .row(i)
                .iter()
                .zip(mean)
                .map(|(f, m)| (f - m) * (f - m))
                .sum();
            if dist < best {
                best = dist;
                nearest = col;
            }
        }
        if pred != nearest {
            mismatches += 1;
        }
    }
    let ncc_mismatch = if n == 0 { 0.0 } else { mismatches as f64 / n as f64 };

    Ok(NcMetrics {
        equinorm_cov_means,
        equinorm_cov_weights,
        equiangularity_means,
        equiangularity_weights,
        self_duality,
        ncc_mismatch,
    })
}

/// Norm coefficient of variation and mean deviation of pairwise cosines
/// from -1/(C-1) for a family of vectors; `Err` names a zero-norm member.
fn frame_stats(vectors: &[Vec<f64>]) -> Result<(f64, f64), usize> {
    let c = vectors.len();
    let norms: Vec<f64> =
        vectors.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(zero) = norms.iter().position(|n| *n == 0.0) {
        return Err(zero);
    }
    let mean_norm = norms.iter().sum::<f64>() / c as f64;
    let var_norm =
        norms.iter().map(|n| (n - mean_norm) * (n - mean_norm)).sum::<f64>() / c as f64;
    let cov = var_norm.sqrt() / mean_norm;

    let target = 1.0 / (c as f64 - 1.0);
    let mut ang = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i == j {
                continue;
            }
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            ang += (dot / (norms[i] * norms[j]) + target).abs();
        }
    }
    Ok((cov, ang / (c * (c - 1)) as f64))
}

fn frobenius(columns: &[Vec<f64>]) -> f64 {
    columns.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Class means of per-sample features, one class per column (d x C).
pub fn class_means_of(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
) -> GeometryResult<Matrix> {
    let (n, d) = (features.rows(), features.cols());
    if labels.len() != n {
        return Err(GeometryError::Data(format!("{} labels for {n} feature rows", labels.len())));
    }
    let mut counts = vec![0usize; num_classes];
    let mut sums = vec![vec![0.0; d]; num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(GeometryError::Data(format!("label {l} out of range")));
        }
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(features.row(i)) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|c| *c == 0) {
        return Err(GeometryError::Data(format!("class {empty} has no samples")));
    }
    let mut means = Matrix::zeros(d, num_classes);
    for (c, (sum, count)) in sums.iter().zip(&counts).enumerate() {
        for r in 0..d {
            means.row_mut(r)[c] = sum[r] / *count as f64;
        }
    }
    Ok(means)
}

/// Columns of the canonical tight frame in `dim >= classes` dimensions:
/// scaled (e_c - 1/C), unit norm, pairwise cosine -1/(C-1). Useful as an
/// exact reference in tests and validation runs.
pub fn simplex_frame(dim: usize, classes: usize) -> GeometryResult<Matrix> {
    if classes < 2 || dim < classes {
        return Err(GeometryError::Data(format!(
            "frame needs dim >= classes >= 2, got dim {dim}, classes {classes}"
        )));
    }
    let c = classes as f64;
    let scale = (c / (c - 1.0)).sqrt();
    let mut m = Matrix::zeros(dim, classes);
    for col in 0..classes {
        for r in 0..classes {
            let e = if r == col { 1.0 } else { 0.0 };
            m.row_mut(r)[col] = scale * (e - 1.0 / c);
        }
    }
    Ok(m)
}
