//! Token sequences paired with per-sequence class labels.

use lapform_core::{Matrix, TokenBatch};

use crate::error::{GeometryError, GeometryResult};

#[derive(Debug, Clone)]
pub struct LabeledTokenSet {
    tokens: TokenBatch,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledTokenSet {
    pub fn new(tokens: TokenBatch, labels: Vec<usize>, num_classes: usize) -> GeometryResult<Self> {
        if labels.len() != tokens.batch() {
            return Err(GeometryError::Data(format!(
                "{} labels for {} sequences",
                labels.len(),
                tokens.batch()
            )));
        }
        if num_classes == 0 {
            return Err(GeometryError::Data("num_classes must be positive".into()));
        }
        if let Some(bad) = labels.iter().position(|l| *l >= num_classes) {
            return Err(GeometryError::Data(format!(
                "label {} at index {bad} out of range for {num_classes} classes",
                labels[bad]
            )));
        }
        Ok(Self { tokens, labels, num_classes })
    }

    pub fn tokens(&self) -> &TokenBatch {
        &self.tokens
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Sequence indices grouped by class; classes with no members are empty.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, l) in self.labels.iter().enumerate() {
            groups[*l].push(i);
        }
        groups
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for l in &self.labels {
            counts[*l] += 1;
        }
        counts
    }

    pub fn is_balanced(&self) -> bool {
        let counts = self.class_counts();
        let nonzero: Vec<usize> = counts.into_iter().filter(|c| *c > 0).collect();
        nonzero.windows(2).all(|w| w[0] == w[1])
    }

    /// Same labels over a different activation batch (e.g. a later layer).
    pub fn with_tokens(&self, tokens: TokenBatch) -> GeometryResult<Self> {
        Self::new(tokens, self.labels.clone(), self.num_classes)
    }
}

/// Per-sequence token means, one row per sequence.
pub fn token_means(batch: &TokenBatch) -> Matrix {
    let (b, t, d) = (batch.batch(), batch.seq_len(), batch.dim());
    let mut out = Matrix::zeros(b, d);
    for s in 0..b {
        let row = out.row_mut(s);
        for i in 0..t {
            for (o, v) in row.iter_mut().zip(batch.token(s, i)) {
                *o += v;
            }
        }
        for o in row.iter_mut() {
            *o /= t as f64;
        }
    }
    out
}
