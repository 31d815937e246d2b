//! Projection of token embeddings onto the plane spanned by three sampled
//! classifier directions, drawn as an equilateral triangle.

use lapform_core::{thin_svd, Matrix, RngState, TokenBatch};

use crate::error::{GeometryError, GeometryResult};

/// Relative rank floor: the third singular value of the stacked unit rows
/// must clear this multiple of the first, or the sampled triple is treated
/// as coplanar-degenerate.
const RANK_FLOOR: f64 = 1e-9;

/// 2 x 3 map sending e1, e2, e3 to the corners of an equilateral triangle
/// (side sqrt(2)) centered at the origin; the all-ones vector maps to 0.
pub fn simplex_basis() -> Matrix {
    let h = 2.0_f64.sqrt() / 2.0;
    let a = 6.0_f64.sqrt() / 6.0;
    let b = 6.0_f64.sqrt() / 3.0;
    Matrix::new(2, 3, vec![h, -h, 0.0, -a, -a, b]).unwrap()
}

#[derive(Debug, Clone)]
pub struct SimplexProjection {
    /// Plane coordinates of every token, in flattened (sequence, token) order.
    pub points: Vec<[f64; 2]>,
    /// Class label of each point (the label of its sequence).
    pub point_labels: Vec<usize>,
    /// The three classes whose classifier rows span the projection.
    pub classes: [usize; 3],
    /// Where the three sampled unit classifier directions land; for
    /// orthonormal rows these are exactly the triangle corners.
    pub vertices: [[f64; 2]; 3],
    /// Whether the first sampled triple was degenerate and a second was drawn.
    pub resampled: bool,
}

/// Projects every token onto two dimensions through three sampled rows of
/// the classifier: the rows are unit-normalized, replaced by their nearest
/// orthonormal frame (SVD orthogonal factor), and composed with the
/// triangle map so the three class directions land near the corners.
pub fn simplex_project(
    tokens: &TokenBatch,
    labels: &[usize],
    classifier: &Matrix,
    rng: &mut RngState,
) -> GeometryResult<SimplexProjection> {
    let (b, t, d) = (tokens.batch(), tokens.seq_len(), tokens.dim());
    let c = classifier.rows();
    if labels.len() != b {
        return Err(GeometryError::Data(format!("{} labels for {b} sequences", labels.len())));
    }
    if classifier.cols() != d {
        return Err(GeometryError::Data(format!(
            "classifier acts on dim {}, tokens have dim {d}",
            classifier.cols()
        )));
    }
    if c < 3 || d < 3 {
        return Err(GeometryError::Data(format!(
            "need at least 3 classes and 3 dimensions, got {c} classes, dim {d}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|l| **l >= c) {
        return Err(GeometryError::Data(format!("label {bad} out of range")));
    }

    let mut resampled = false;
    loop {
        let picks = rng.sample_distinct(c, 3);
        let mut classes = [picks[0], picks[1], picks[2]];
        classes.sort_unstable();

        match frame_for(classifier, &classes)? {
            Some(q) => {
                let basis = simplex_basis();
                // Plane map for a vector x: basis * (Q x).
                let plane = basis.matmul(&q).unwrap(); // 2 x d
                let mut points = Vec::with_capacity(b * t);
                let mut point_labels = Vec::with_capacity(b * t);
                for (s, &l) in labels.iter().enumerate() {
                    for i in 0..t {
                        points.push(apply_plane(&plane, tokens.token(s, i)));
                        point_labels.push(l);
                    }
                }
                let mut vertices = [[0.0; 2]; 3];
                for (v, &class) in vertices.iter_mut().zip(classes.iter()) {
                    let row = classifier.row(class);
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let unit: Vec<f64> = row.iter().map(|x| x / norm).collect();
                    *v = apply_plane(&plane, &unit);
                }
                return Ok(SimplexProjection {
                    points,
                    point_labels,
                    classes,
                    vertices,
                    resampled,
                });
            }
            None if !resampled => resampled = true,
            None => {
                return Err(GeometryError::Degenerate(
                    "sampled classifier rows span fewer than 3 directions twice in a row".into(),
                ));
            }
        }
    }
}

/// Orthonormal 3 x d frame nearest the unit-normalized sampled rows, or
/// `None` when the rows do not span three directions.
fn frame_for(classifier: &Matrix, classes: &[usize; 3]) -> GeometryResult<Option<Matrix>> {
    let d = classifier.cols();
    let mut w3 = Matrix::zeros(3, d);
    for (r, &class) in classes.iter().enumerate() {
        let row = classifier.row(class);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(None);
        }
        for (dst, v) in w3.row_mut(r).iter_mut().zip(row) {
            *dst = v / norm;
        }
    }
    let svd = thin_svd(&w3)?;
    if svd.s[2] < RANK_FLOOR * svd.s[0] {
        return Ok(None);
    }
    Ok(Some(svd.u.matmul(&svd.vt).unwrap()))
}

fn apply_plane(plane: &Matrix, x: &[f64]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (o, row) in out.iter_mut().zip(0..2) {
        *o = plane.row(row).iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    }
    out
}
