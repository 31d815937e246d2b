//! Rank-3 activation carrier: `B` sequences of `T` tokens with `d` channels.

use crate::error::{ensure_finite, CoreError, CoreResult};
use crate::matrix::Matrix;

/// `B x T x d` array of token embeddings, row-major with token index fastest
/// after channels: token `(b, t)` occupies `data[(b*T + t)*d ..][..d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    batch: usize,
    seq_len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl TokenBatch {
    pub fn new(batch: usize, seq_len: usize, dim: usize, data: Vec<f64>) -> CoreResult<Self> {
        if data.len() != batch * seq_len * dim {
            return Err(CoreError::ShapeMismatch {
                op: "TokenBatch::new",
                detail: format!(
                    "{batch}x{seq_len}x{dim} needs {} entries, got {}",
                    batch * seq_len * dim,
                    data.len()
                ),
            });
        }
        ensure_finite("TokenBatch::new", &data)?;
        Ok(Self { batch, seq_len, dim, data })
    }

    pub fn zeros(batch: usize, seq_len: usize, dim: usize) -> Self {
        Self { batch, seq_len, dim, data: vec![0.0; batch * seq_len * dim] }
    }

    /// Stacks per-sequence `T x d` matrices into one batch.
    pub fn from_sequences(seqs: &[Matrix]) -> CoreResult<Self> {
        let first = seqs.first().ok_or_else(|| CoreError::ShapeMismatch {
            op: "TokenBatch::from_sequences",
            detail: "empty sequence list".into(),
        })?;
        let (t, d) = (first.rows(), first.cols());
        let mut data = Vec::with_capacity(seqs.len() * t * d);
        for s in seqs {
            if s.rows() != t || s.cols() != d {
                return Err(CoreError::ShapeMismatch {
                    op: "TokenBatch::from_sequences",
                    detail: format!("expected {t}x{d}, got {}x{}", s.rows(), s.cols()),
                });
            }
            data.extend_from_slice(s.data());
        }
        Ok(Self { batch: seqs.len(), seq_len: t, dim: d, data })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn token(&self, b: usize, t: usize) -> &[f64] {
        debug_assert!(b < self.batch && t < self.seq_len);
        let start = (b * self.seq_len + t) * self.dim;
        &self.data[start..start + self.dim]
    }

    #[inline]
    pub fn token_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        debug_assert!(b < self.batch && t < self.seq_len);
        let start = (b * self.seq_len + t) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// Copies sequence `b` out as a `T x d` matrix.
    pub fn sequence(&self, b: usize) -> Matrix {
        let start = b * self.seq_len * self.dim;
        Matrix::from_raw(
            self.seq_len,
            self.dim,
            self.data[start..start + self.seq_len * self.dim].to_vec(),
        )
    }

    pub fn set_sequence(&mut self, b: usize, seq: &Matrix) -> CoreResult<()> {
        if seq.rows() != self.seq_len || seq.cols() != self.dim {
            return Err(CoreError::ShapeMismatch {
                op: "TokenBatch::set_sequence",
                detail: format!(
                    "expected {}x{}, got {}x{}",
                    self.seq_len,
                    self.dim,
                    seq.rows(),
                    seq.cols()
                ),
            });
        }
        let start = b * self.seq_len * self.dim;
        self.data[start..start + self.seq_len * self.dim].copy_from_slice(seq.data());
        Ok(())
    }

    /// Flattens to a `(B*T) x d` matrix, sequence-major.
    pub fn flatten(&self) -> Matrix {
        Matrix::from_raw(self.batch * self.seq_len, self.dim, self.data.clone())
    }

    /// Subset of sequences, in the given order.
    pub fn select(&self, indices: &[usize]) -> TokenBatch {
        let mut data = Vec::with_capacity(indices.len() * self.seq_len * self.dim);
        for &b in indices {
            let start = b * self.seq_len * self.dim;
            data.extend_from_slice(&self.data[start..start + self.seq_len * self.dim]);
        }
        Self { batch: indices.len(), seq_len: self.seq_len, dim: self.dim, data }
    }

    pub fn validate_finite(&self, context: &'static str) -> CoreResult<()> {
        ensure_finite(context, &self.data)
    }
}
