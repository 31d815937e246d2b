use std::path::Path;

use lapform_geometry::GeometryReport;
use lapform_model::load_checkpoint;

use crate::analysis::analyze_run;
use crate::config::{load_config, MeasureSplit};
use crate::dataset::load_splits;
use crate::emit::read_report_json;
use crate::error::{HarnessError, HarnessResult};

/// Matching tolerance for a recomputed report.
pub const VERIFY_TOL: f64 = 1e-9;

#[derive(Debug)]
pub struct VerifyReport {
    pub worst_field: String,
    pub worst_diff: f64,
    pub fields: usize,
    pub tol: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.worst_diff <= self.tol
    }
}

fn scalar_fields(report: &GeometryReport) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, v) in report.cossim.iter().enumerate() {
        out.push((format!("cossim[{i}]"), *v));
    }
    for (i, v) in report.snr.iter().enumerate() {
        out.push((format!("snr[{i}]"), *v));
    }
    let a = &report.anova;
    for (name, v) in [
        ("anova.total", a.total),
        ("anova.within_seq", a.within_seq),
        ("anova.within_class", a.within_class),
        ("anova.between_class", a.between_class),
        ("anova.within_seq_fraction", a.within_seq_fraction),
        ("anova.within_class_fraction", a.within_class_fraction),
        ("anova.between_class_fraction", a.between_class_fraction),
    ] {
        out.push((name.into(), v));
    }
    let nc = &report.nc;
    for (name, v) in [
        ("nc.equinorm_cov_means", nc.equinorm_cov_means),
        ("nc.equinorm_cov_weights", nc.equinorm_cov_weights),
        ("nc.equiangularity_means", nc.equiangularity_means),
        ("nc.equiangularity_weights", nc.equiangularity_weights),
        ("nc.self_duality", nc.self_duality),
        ("nc.ncc_mismatch", nc.ncc_mismatch),
    ] {
        out.push((name.into(), v));
    }
    let ntc = &report.ntc;
    for (name, v) in [
        ("ntc.within_seq_var", ntc.within_seq_var),
        ("ntc.within_class_var", ntc.within_class_var),
        ("ntc.between_class_fraction", ntc.between_class_fraction),
    ] {
        out.push((name.into(), v));
    }
    out
}

/// Compares two reports field by field.
pub fn compare_reports(
    stored: &GeometryReport,
    recomputed: &GeometryReport,
    tol: f64,
) -> HarnessResult<VerifyReport> {
    let a = scalar_fields(stored);
    let b = scalar_fields(recomputed);
    if a.len() != b.len() {
        return Err(HarnessError::Data(format!(
            "stored report has {} scalar fields, recomputed has {}",
            a.len(),
            b.len()
        )));
    }
    let mut worst_field = String::from("none");
    let mut worst_diff = 0.0_f64;
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        let diff = (x - y).abs();
        if !diff.is_finite() || diff > worst_diff {
            worst_diff = if diff.is_finite() { diff } else { f64::INFINITY };
            worst_field = name.clone();
            if !diff.is_finite() {
                break;
            }
        }
    }
    Ok(VerifyReport {
        worst_field,
        worst_diff,
        fields: a.len(),
        tol,
    })
}

/// Loads a run directory's config and checkpoint and reruns the geometry
/// pass on the configured measurement split.
pub fn recompute_artifacts(
    run_dir: &Path,
) -> HarnessResult<(crate::config::ExperimentConfig, crate::analysis::AnalysisArtifacts)> {
    let cfg = load_config(&run_dir.join("config.json"))?;
    let params = load_checkpoint(&run_dir.join("checkpoint.lpfm"), &cfg.model)?;
    let (train_split, test_split) = load_splits(&cfg)?;
    let measure = match cfg.analysis.measure_split {
        MeasureSplit::Train => &train_split,
        MeasureSplit::Test => &test_split,
    };
    let artifacts = analyze_run(
        &cfg.model,
        &params,
        &measure.input,
        &measure.labels,
        measure.num_classes,
        &cfg.analysis,
    )?;
    Ok((cfg, artifacts))
}

/// Re-derives the geometry report of a finished run from its checkpoint,
/// dataset, and recorded config, and matches it against the stored report.
pub fn verify_run(run_dir: &Path, tol: f64) -> HarnessResult<VerifyReport> {
    let stored = read_report_json(&run_dir.join("report.json"))?;
    let (_, artifacts) = recompute_artifacts(run_dir)?;
    compare_reports(&stored, &artifacts.report, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{
        AnalysisSpec, DatasetSpec, DiffusionSpec, ExperimentConfig, OutputSpec, SweepSpec,
        CONFIG_VERSION,
    };
    use crate::dataset::SyntheticSpec;
    use crate::experiment::{cells, run_cell};
    use lapform_model::{AssignmentSpec, InputSpec, ModelConfig, TrainConfig};
    use std::fs;

    fn trained_run(dir: &Path) -> ExperimentConfig {
        let spec = SyntheticSpec {
            classes: 3,
            per_class: 6,
            test_per_class: 3,
            seq_len: 3,
            dim: 6,
            ..SyntheticSpec::default()
        };
        let cfg = ExperimentConfig {
            version: CONFIG_VERSION,
            model: ModelConfig {
                depth: 1,
                heads: 2,
                dim: 6,
                head_dim: None,
                mlp_ratio: 2,
                num_classes: 3,
                input: InputSpec::SyntheticTokens { seq_len: 3 },
                drop_path_p: 0.0,
                qk_norm: false,
                head_assignment: AssignmentSpec::Uniform { laplacian_heads: 1 },
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 6,
                warmup_epochs: 1,
                ..TrainConfig::default()
            },
            dataset: DatasetSpec::Synthetic(spec),
            sweep: SweepSpec::default(),
            analysis: AnalysisSpec::default(),
            diffusion: DiffusionSpec::default(),
            output: OutputSpec {
                dir: dir.to_path_buf(),
                ..OutputSpec::default()
            },
        };
        let cell = cells(&cfg)[0];
        run_cell(&cfg, &cell, dir).unwrap();
        cfg
    }

    #[test]
    fn fresh_run_verifies_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        trained_run(dir.path());
        let report = verify_run(dir.path(), VERIFY_TOL).unwrap();
        assert!(report.passed(), "worst {} = {}", report.worst_field, report.worst_diff);
        assert!(report.fields > 10);
    }

    #[test]
    fn tampered_report_fails_with_the_field_named() {
        let dir = tempfile::tempdir().unwrap();
        trained_run(dir.path());
        let path = dir.path().join("report.json");
        let mut report = read_report_json(&path).unwrap();
        report.nc.self_duality += 1e-3;
        crate::emit::write_report_json(&path, &report).unwrap();
        let verdict = verify_run(dir.path(), VERIFY_TOL).unwrap();
        assert!(!verdict.passed());
        assert_eq!(verdict.worst_field, "nc.self_duality");
        assert!((verdict.worst_diff - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn missing_report_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        trained_run(dir.path());
        fs::remove_file(dir.path().join("report.json")).unwrap();
        assert!(verify_run(dir.path(), VERIFY_TOL).is_err());
    }
}
