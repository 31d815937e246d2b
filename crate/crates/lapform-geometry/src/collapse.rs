//! Within-sequence collapse metrics: mean pairwise cosine similarity and
//! the mean-to-spread ratio of token clouds.

use lapform_core::TokenBatch;

use crate::error::{GeometryError, GeometryResult};

const COS_EPS: f64 = 1e-12;

/// Ceiling for the mean-to-spread ratio of a fully collapsed sequence.
pub const SNR_CAP: f64 = 1e12;

/// Mean cosine similarity over ordered token pairs (i != j), averaged over
/// the batch. Needs at least two tokens per sequence.
pub fn cossim(batch: &TokenBatch) -> GeometryResult<f64> {
    let (b, t, _) = (batch.batch(), batch.seq_len(), batch.dim());
    if b == 0 {
        return Err(GeometryError::Data("empty batch".into()));
    }
    if t < 2 {
        return Err(GeometryError::Data(format!(
            "pairwise similarity needs at least 2 tokens, got {t}"
        )));
    }
    let mut acc = 0.0;
    for s in 0..b {
        let norms: Vec<f64> = (0..t)
            .map(|i| batch.token(s, i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut seq_sum = 0.0;
        for i in 0..t {
            for j in 0..t {
                if i == j {
                    continue;
                }
                let dot: f64 = batch
                    .token(s, i)
                    .iter()
                    .zip(batch.token(s, j))
                    .map(|(a, b)| a * b)
                    .sum();
                seq_sum += dot / (norms[i] * norms[j]).max(COS_EPS);
            }
        }
        acc += seq_sum / (t * (t - 1)) as f64;
    }
    Ok(acc / b as f64)
}

/// Per-sequence ratio of the token-mean norm to the token spread, averaged
/// over the batch. Spread is the root mean squared distance from the
/// sequence mean; a vanishing spread is reported as `SNR_CAP`.
pub fn snr(batch: &TokenBatch) -> GeometryResult<f64> {
    let (b, t, d) = (batch.batch(), batch.seq_len(), batch.dim());
    if b == 0 || t == 0 {
        return Err(GeometryError::Data("empty batch".into()));
    }
    let mut acc = 0.0;
    for s in 0..b {
        let mut mean = vec![0.0; d];
        for i in 0..t {
            for (m, v) in mean.iter_mut().zip(batch.token(s, i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= t as f64;
        }
        let mean_norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let spread_sq: f64 = (0..t)
            .map(|i| {
                batch
                    .token(s, i)
                    .iter()
                    .zip(&mean)
                    .map(|(v, m)| (v - m) * (v - m))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / t as f64;
        let spread = spread_sq.sqrt();
        acc += if spread * SNR_CAP <= mean_norm || spread == 0.0 {
            SNR_CAP
        } else {
            (mean_norm / spread).min(SNR_CAP)
        };
    }
    Ok(acc / b as f64)
}

pub fn cossim_per_layer(layers: &[TokenBatch]) -> GeometryResult<Vec<f64>> {
    layers.iter().map(cossim).collect()
}

pub fn snr_per_layer(layers: &[TokenBatch]) -> GeometryResult<Vec<f64>> {
    layers.iter().map(snr).collect()
}
