//! Experiment harness: configuration, datasets, orchestration, and emission.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod diffusion_run;
pub mod emit;
pub mod error;
pub mod experiment;
pub mod verify;

pub use analysis::{analyze_run, AnalysisArtifacts};
pub use config::{
    load_config, AnalysisSpec, DatasetSpec, DiffusionMode, DiffusionSpec, ExperimentConfig,
    Format, MeasureSplit, OutputSpec, Overrides, SweepSpec, CONFIG_VERSION,
};
pub use diffusion_run::{run_diffusion, DiffusionOutcome};
pub use emit::{emit_run, metrics_csv, read_report_json, write_metrics_csv, write_report_json, write_trajectory_csv};
pub use dataset::{
    class_centers, gen_synthetic, load_idx, load_lpds, load_splits, save_lpds, LabeledDataset,
    SplitData, SyntheticSpec,
};
pub use error::{HarnessError, HarnessResult};
pub use experiment::{cells, mean_std, run_cell, run_experiment, summary_csv, Cell, CellOutcome, ExperimentOutcome};
pub use verify::{compare_reports, recompute_artifacts, verify_run, VerifyReport, VERIFY_TOL};
