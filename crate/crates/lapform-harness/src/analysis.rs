use lapform_core::{RngState, TokenBatch};
use lapform_geometry::{
    cossim_per_layer, ntc_report, pca_project, simplex_project, snr_per_layer, GeometryReport,
    LabeledTokenSet, PcaProjection, SimplexProjection,
};
use lapform_model::{model_forward, CaptureOptions, InputBatch, ModelConfig, ParamSet};

use crate::config::AnalysisSpec;
use crate::error::{HarnessError, HarnessResult};

/// Everything the geometry pass produces for one trained run.
#[derive(Debug)]
pub struct AnalysisArtifacts {
    pub report: GeometryReport,
    pub pca: PcaProjection,
    /// Per-point labels for the principal scatter, one per token.
    pub pca_labels: Vec<usize>,
    /// Classes kept for the principal scatter (all of them unless limited).
    pub pca_classes: Vec<usize>,
    /// Absent when the run has fewer than 3 classes or 3 dimensions.
    pub simplex: Option<SimplexProjection>,
    /// Sequences actually measured after subsampling.
    pub measured: usize,
}

fn tokenwise_labels(labels: &[usize], seq_len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(labels.len() * seq_len);
    for &label in labels {
        out.extend(std::iter::repeat(label).take(seq_len));
    }
    out
}

/// Runs one capture forward pass on (a subsample of) the measurement split
/// and derives the full geometry report plus both projections.
///
/// All randomness (subsampling, scatter class choice, simplex class choice)
/// comes from `spec.projection_seed` via fixed streams.
pub fn analyze_run(
    cfg: &ModelConfig,
    params: &ParamSet,
    input: &InputBatch,
    labels: &[usize],
    num_classes: usize,
    spec: &AnalysisSpec,
) -> HarnessResult<AnalysisArtifacts> {
    if labels.is_empty() || input.len() != labels.len() {
        return Err(HarnessError::Data(format!(
            "measurement split has {} inputs for {} labels",
            input.len(),
            labels.len()
        )));
    }
    let rng = RngState::new(spec.projection_seed);

    let n = labels.len();
    let limit = spec.measure_limit.min(n);
    let (sub_input, sub_labels): (InputBatch, Vec<usize>) = if limit < n {
        let mut ids = rng.derive(0).sample_distinct(n, limit);
        ids.sort_unstable();
        let picked = ids.iter().map(|&i| labels[i]).collect();
        (input.select(&ids), picked)
    } else {
        (input.clone(), labels.to_vec())
    };

    let out = model_forward(cfg, params, &sub_input, false, None, &CaptureOptions::all())?;
    let capture = out.capture;
    let final_ln = capture
        .final_ln
        .ok_or_else(|| HarnessError::Data("forward pass captured no final-norm tokens".into()))?;
    let pooled = capture
        .pooled
        .ok_or_else(|| HarnessError::Data("forward pass captured no pooled features".into()))?;

    let cossim = cossim_per_layer(&capture.block_outputs)?;
    let snr = snr_per_layer(&capture.pre_mlp_ln)?;

    // Stored as input-by-class for the logit product; geometry wants one
    // class vector per row.
    let classifier = params.get("classifier.weight")?.as_matrix().transpose();
    let set = LabeledTokenSet::new(final_ln.clone(), sub_labels.clone(), num_classes)?;
    let report = ntc_report(
        &set,
        &classifier,
        &pooled,
        &out.logits,
        cossim,
        snr,
        spec.averaging,
    )?;

    let (pca_tokens, pca_seq_labels, pca_classes) =
        scatter_subset(&final_ln, &sub_labels, num_classes, spec, &rng);
    let pca = pca_project(&pca_tokens.flatten())?;
    let pca_labels = tokenwise_labels(&pca_seq_labels, pca_tokens.seq_len());

    let simplex = if num_classes >= 3 && final_ln.dim() >= 3 {
        let mut srng = rng.derive(2);
        Some(simplex_project(
            &final_ln,
            &sub_labels,
            &classifier,
            &mut srng,
        )?)
    } else {
        None
    };

    Ok(AnalysisArtifacts {
        report,
        pca,
        pca_labels,
        pca_classes,
        simplex,
        measured: sub_labels.len(),
    })
}

/// Restrict the scatter to a random class subset when the config asks for
/// fewer classes than the run has.
fn scatter_subset(
    tokens: &TokenBatch,
    labels: &[usize],
    num_classes: usize,
    spec: &AnalysisSpec,
    rng: &RngState,
) -> (TokenBatch, Vec<usize>, Vec<usize>) {
    let keep = match spec.pca_classes {
        Some(k) if k < num_classes => {
            let mut classes = rng.derive(1).sample_distinct(num_classes, k);
            classes.sort_unstable();
            classes
        }
        _ => (0..num_classes).collect(),
    };
    if keep.len() == num_classes {
        return (tokens.clone(), labels.to_vec(), keep);
    }
    let ids: Vec<usize> = (0..labels.len())
        .filter(|&i| keep.contains(&labels[i]))
        .collect();
    let picked = ids.iter().map(|&i| labels[i]).collect();
    (tokens.select(&ids), picked, keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MeasureSplit;
    use crate::dataset::{gen_synthetic, SyntheticSpec};
    use lapform_model::{AssignmentSpec, InputSpec, ModelConfig};

    fn fixture() -> (ModelConfig, ParamSet, InputBatch, Vec<usize>) {
        let spec = SyntheticSpec {
            classes: 4,
            per_class: 6,
            test_per_class: 2,
            seq_len: 3,
            dim: 8,
            ..SyntheticSpec::default()
        };
        let data = gen_synthetic(&spec, MeasureSplit::Train).unwrap();
        let cfg = ModelConfig {
            depth: 2,
            heads: 2,
            dim: 8,
            head_dim: None,
            mlp_ratio: 2,
            num_classes: 4,
            input: InputSpec::SyntheticTokens { seq_len: 3 },
            drop_path_p: 0.0,
            qk_norm: false,
            head_assignment: AssignmentSpec::Uniform { laplacian_heads: 1 },
        };
        let params = ParamSet::init(&cfg, 5).unwrap();
        (cfg, params, InputBatch::Tokens(data.tokens), data.labels)
    }

    #[test]
    fn full_pass_shapes_line_up() {
        let (cfg, params, input, labels) = fixture();
        let spec = AnalysisSpec::default();
        let art = analyze_run(&cfg, &params, &input, &labels, 4, &spec).unwrap();
        assert_eq!(art.measured, 24);
        assert_eq!(art.report.cossim.len(), 2);
        assert_eq!(art.report.snr.len(), 2);
        assert_eq!(art.pca.coords.rows(), 24 * 3);
        assert_eq!(art.pca_labels.len(), 24 * 3);
        assert_eq!(art.pca_classes, vec![0, 1, 2, 3]);
        let simplex = art.simplex.expect("4 classes in 8 dims project");
        assert_eq!(simplex.points.len(), 24 * 3);
    }

    #[test]
    fn measure_limit_subsamples_deterministically() {
        let (cfg, params, input, labels) = fixture();
        let spec = AnalysisSpec {
            measure_limit: 10,
            ..AnalysisSpec::default()
        };
        let a = analyze_run(&cfg, &params, &input, &labels, 4, &spec).unwrap();
        let b = analyze_run(&cfg, &params, &input, &labels, 4, &spec).unwrap();
        assert_eq!(a.measured, 10);
        assert_eq!(a.pca_labels, b.pca_labels);
        assert_eq!(a.report.anova.total, b.report.anova.total);
        assert_eq!(a.pca.coords.data(), b.pca.coords.data());
    }

    #[test]
    fn scatter_class_limit_filters_points() {
        let (cfg, params, input, labels) = fixture();
        let spec = AnalysisSpec {
            pca_classes: Some(2),
            ..AnalysisSpec::default()
        };
        let art = analyze_run(&cfg, &params, &input, &labels, 4, &spec).unwrap();
        assert_eq!(art.pca_classes.len(), 2);
        assert!(art
            .pca_labels
            .iter()
            .all(|label| art.pca_classes.contains(label)));
        assert_eq!(art.pca.coords.rows(), 2 * 6 * 3);
        // The report itself still covers every class.
        assert_eq!(art.report.cossim.len(), 2);
    }

    #[test]
    fn two_class_runs_skip_the_simplex() {
        let spec = SyntheticSpec {
            classes: 2,
            per_class: 5,
            test_per_class: 2,
            seq_len: 3,
            dim: 8,
            ..SyntheticSpec::default()
        };
        let data = gen_synthetic(&spec, MeasureSplit::Train).unwrap();
        let cfg = ModelConfig {
            depth: 1,
            heads: 2,
            dim: 8,
            head_dim: None,
            mlp_ratio: 2,
            num_classes: 2,
            input: InputSpec::SyntheticTokens { seq_len: 3 },
            drop_path_p: 0.0,
            qk_norm: false,
            head_assignment: AssignmentSpec::Uniform { laplacian_heads: 0 },
        };
        let params = ParamSet::init(&cfg, 5).unwrap();
        let art = analyze_run(
            &cfg,
            &params,
            &InputBatch::Tokens(data.tokens),
            &data.labels,
            2,
            &AnalysisSpec::default(),
        )
        .unwrap();
        assert!(art.simplex.is_none());
    }
}
