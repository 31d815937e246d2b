//! Assembly of the per-run measurement report: layerwise collapse curves,
//! the variance decomposition with fractions, class-structure metrics, and
//! the token-collapse summary.

use lapform_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::anova::{anova_decompose, AnovaDecomposition, ClassAveraging};
use crate::error::GeometryResult;
use crate::labeled::LabeledTokenSet;
use crate::nc::{class_means_of, nc_metrics, NcMetrics};

/// Token-collapse summary: the two residual variances that vanish under
/// full collapse, and how much of the total variance separates classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NtcSummary {
    pub within_seq_var: f64,
    pub within_class_var: f64,
    pub between_class_fraction: f64,
}

/// Variance decomposition plus the fractions of total, as reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnovaSection {
    pub total: f64,
    pub within_seq: f64,
    pub within_class: f64,
    pub between_class: f64,
    pub within_seq_fraction: f64,
    pub within_class_fraction: f64,
    pub between_class_fraction: f64,
}

impl From<&AnovaDecomposition> for AnovaSection {
    fn from(a: &AnovaDecomposition) -> Self {
        let frac = |v: f64| if a.total == 0.0 { 0.0 } else { v / a.total };
        AnovaSection {
            total: a.total,
            within_seq: a.within_seq,
            within_class: a.within_class,
            between_class: a.between_class,
            within_seq_fraction: frac(a.within_seq),
            within_class_fraction: frac(a.within_class),
            between_class_fraction: frac(a.between_class),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryReport {
    /// Mean pairwise token cosine per block output.
    pub cossim: Vec<f64>,
    /// Signal-to-noise ratio per pre-MLP normalization output.
    pub snr: Vec<f64>,
    pub anova: AnovaSection,
    pub nc: NcMetrics,
    pub ntc: NtcSummary,
}

/// Builds the full report from final-layer tokens (`set`), per-sample
/// pooled features aligned with the set's labels, the classifier, and the
/// logits; the layerwise curves are passed through as measured.
pub fn ntc_report(
    set: &LabeledTokenSet,
    classifier: &Matrix,
    features: &Matrix,
    logits: &Matrix,
    cossim: Vec<f64>,
    snr: Vec<f64>,
    averaging: ClassAveraging,
) -> GeometryResult<GeometryReport> {
    let anova = anova_decompose(set, averaging)?;
    let means = class_means_of(features, set.labels(), set.num_classes())?;
    let nc = nc_metrics(&means, classifier, features, set.labels(), logits)?;
    let ntc = NtcSummary {
        within_seq_var: anova.within_seq,
        within_class_var: anova.within_class,
        between_class_fraction: anova.between_class_fraction(),
    };
    Ok(GeometryReport { cossim, snr, anova: (&anova).into(), nc, ntc })
}
