//! Two-component principal projection of feature rows.

use lapform_core::{thin_svd, Matrix};

use crate::error::{GeometryError, GeometryResult};

#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// One (x, y) row per input row.
    pub coords: Matrix,
    /// Sample variances along the two components: s_i^2 / (N - 1).
    pub variances: [f64; 2],
    /// The two component directions as rows (2 x d).
    pub components: Matrix,
}

/// Centers the rows, takes a thin SVD, and projects onto the two leading
/// right singular directions.
pub fn pca_project(features: &Matrix) -> GeometryResult<PcaProjection> {
    let (n, d) = (features.rows(), features.cols());
    if n < 2 {
        return Err(GeometryError::Data(format!(
            "principal projection needs at least 2 rows, got {n}"
        )));
    }
    if d < 2 {
        return Err(GeometryError::Data(format!(
            "principal projection needs at least 2 columns, got {d}"
        )));
    }
    let means = features.column_means();
    let mut centered = features.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let svd = thin_svd(&centered)?;

    let mut components = Matrix::zeros(2, d);
    for c in 0..2 {
        for j in 0..d {
            *components.row_mut(c).get_mut(j).unwrap() = svd.vt.get(c, j);
        }
    }
    let mut coords = Matrix::zeros(n, 2);
    for r in 0..n {
        let row = centered.row(r);
        for c in 0..2 {
            let dir = components.row(c);
            let dot: f64 = row.iter().zip(dir).map(|(a, b)| a * b).sum();
            *coords.row_mut(r).get_mut(c).unwrap() = dot;
        }
    }
    let denom = (n - 1) as f64;
    let variances = [svd.s[0] * svd.s[0] / denom, svd.s[1] * svd.s[1] / denom];
    Ok(PcaProjection { coords, variances, components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lapform_core::RngState;

    #[test]
    fn axis_aligned_cloud_recovers_axis_variances() {
        // Points (+-2, 0) and (0, +-1): covariance diag(8/3, 2/3).
        let m = Matrix::new(
            4,
            2,
            vec![2.0, 0.0, -2.0, 0.0, 0.0, 1.0, 0.0, -1.0],
        )
        .unwrap();
        let p = pca_project(&m).unwrap();
        assert!((p.variances[0] - 8.0 / 3.0).abs() < 1e-12);
        assert!((p.variances[1] - 2.0 / 3.0).abs() < 1e-12);
        // First component is the x axis up to sign.
        assert!((p.components.get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!(p.components.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn translation_leaves_the_projection_unchanged() {
        let mut rng = RngState::new(3);
        let data: Vec<f64> = (0..20 * 3).map(|_| rng.normal()).collect();
        let m = Matrix::new(20, 3, data).unwrap();
        let mut shifted = m.clone();
        for r in 0..20 {
            for (j, v) in shifted.row_mut(r).iter_mut().enumerate() {
                *v += 100.0 * (j + 1) as f64;
            }
        }
        let a = pca_project(&m).unwrap();
        let b = pca_project(&shifted).unwrap();
        assert!((a.variances[0] - b.variances[0]).abs() < 1e-8 * a.variances[0].max(1.0));
        assert!((a.variances[1] - b.variances[1]).abs() < 1e-8 * a.variances[1].max(1.0));
        for r in 0..20 {
            for c in 0..2 {
                assert!((a.coords.get(r, c).abs() - b.coords.get(r, c).abs()).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rank_one_data_has_zero_second_variance() {
        // All points on the line t * (3, 4) / 5.
        let ts = [-2.0, -1.0, 0.5, 1.5, 3.0];
        let mut data = Vec::new();
        for t in ts {
            data.push(t * 0.6);
            data.push(t * 0.8);
        }
        let m = Matrix::new(5, 2, data).unwrap();
        let p = pca_project(&m).unwrap();
        assert!(p.variances[1].abs() < 1e-12);
        for r in 0..5 {
            assert!(p.coords.get(r, 1).abs() < 1e-9);
        }
        // Projected spread along component 1 equals the centered t-spread.
        let t_mean: f64 = ts.iter().sum::<f64>() / 5.0;
        let want: f64 = ts.iter().map(|t| (t - t_mean) * (t - t_mean)).sum::<f64>() / 4.0;
        assert!((p.variances[0] - want).abs() < 1e-12);
    }

    #[test]
    fn too_small_inputs_are_rejected() {
        assert!(pca_project(&Matrix::zeros(1, 3)).is_err());
        assert!(pca_project(&Matrix::zeros(3, 1)).is_err());
    }
}
