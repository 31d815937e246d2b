use std::fs;
use std::path::{Path, PathBuf};

use lapform_geometry::ClassAveraging;
use lapform_model::{AssignmentSpec, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticSpec;
use crate::error::{HarnessError, HarnessResult};

pub const CONFIG_VERSION: u32 = 1;

/// Top-level experiment description. Loaded from a JSON file; CLI flags
/// override individual fields after loading.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub diffusion: DiffusionSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Where the labeled sequences come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// Generated Gaussian class clusters (the default benchmark).
    Synthetic(SyntheticSpec),
    /// IDX-format image files (MNIST layout), patched by the model.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Previously generated token files (see `gen-data`).
    Lpds { train: PathBuf, test: PathBuf },
}

/// Sweep axes. Absent axes fall back to the model section: a single cell
/// running the model exactly as configured.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Laplacian head counts; each cell overrides the model's head
    /// assignment with a uniform one.
    pub laplacian_heads: Option<Vec<usize>>,
    pub drop_path: Option<Vec<f64>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            laplacian_heads: None,
            drop_path: None,
            seeds: default_seeds(),
        }
    }
}

/// Which split geometry is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureSplit {
    Train,
    Test,
}

/// Geometry measurement settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_averaging")]
    pub averaging: ClassAveraging,
    /// Geometry is measured on held-out data unless overridden.
    #[serde(default = "default_measure_split")]
    pub measure_split: MeasureSplit,
    /// Sequences measured per run (subsampled without replacement).
    #[serde(default = "default_measure_limit")]
    pub measure_limit: usize,
    /// Classes kept for the PCA scatter; `None` keeps all of them.
    #[serde(default)]
    pub pca_classes: Option<usize>,
    /// Seed for measurement subsampling and projection class choices.
    #[serde(default = "default_projection_seed")]
    pub projection_seed: u64,
}

fn default_averaging() -> ClassAveraging {
    ClassAveraging::CountWeighted
}

fn default_measure_split() -> MeasureSplit {
    MeasureSplit::Test
}

fn default_measure_limit() -> usize {
    512
}

fn default_projection_seed() -> u64 {
    7
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            averaging: default_averaging(),
            measure_split: default_measure_split(),
            measure_limit: default_measure_limit(),
            pca_classes: None,
            projection_seed: default_projection_seed(),
        }
    }
}

/// How attention is treated while iterating the heat equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMode {
    /// P computed once from the initial state and reused.
    Frozen,
    /// P recomputed from the current state every step.
    Recomputed,
}

/// Settings for the `diffuse` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    #[serde(default = "default_diffusion_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_diffusion_dim")]
    pub dim: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_diffusion_steps")]
    pub steps: usize,
    #[serde(default = "default_diffusion_seed")]
    pub seed: u64,
    #[serde(default = "default_diffusion_mode")]
    pub mode: DiffusionMode,
}

fn default_diffusion_seq_len() -> usize {
    8
}

fn default_diffusion_dim() -> usize {
    16
}

fn default_dt() -> f64 {
    1.0
}

fn default_diffusion_steps() -> usize {
    200
}

fn default_diffusion_seed() -> u64 {
    11
}

fn default_diffusion_mode() -> DiffusionMode {
    DiffusionMode::Recomputed
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        DiffusionSpec {
            seq_len: default_diffusion_seq_len(),
            dim: default_diffusion_dim(),
            dt: default_dt(),
            steps: default_diffusion_steps(),
            seed: default_diffusion_seed(),
            mode: default_diffusion_mode(),
        }
    }
}

/// Emitted file formats.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

/// Output location and parallelism.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

fn default_workers() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_out_dir(),
            formats: default_formats(),
            workers: default_workers(),
        }
    }
}

/// CLI flag values that override loaded config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub formats: Option<Vec<Format>>,
    pub laplacian_heads: Option<Vec<usize>>,
    pub drop_path: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn apply_overrides(&mut self, ov: &Overrides) {
        if let Some(seed) = ov.seed {
            self.sweep.seeds = vec![seed];
        }
        if let Some(out) = &ov.out {
            self.output.dir = out.clone();
        }
        if let Some(workers) = ov.workers {
            self.output.workers = workers;
        }
        if let Some(formats) = &ov.formats {
            self.output.formats = formats.clone();
        }
        if let Some(ks) = &ov.laplacian_heads {
            self.sweep.laplacian_heads = Some(ks.clone());
        }
        if let Some(dps) = &ov.drop_path {
            self.sweep.drop_path = Some(dps.clone());
        }
    }

    pub fn validate(&self) -> HarnessResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        if let Some(ks) = &self.sweep.laplacian_heads {
            if ks.is_empty() {
                return Err(HarnessError::Config(
                    "sweep.laplacian_heads must not be empty when given".into(),
                ));
            }
            for &k in ks {
                if k > self.model.heads {
                    return Err(HarnessError::Config(format!(
                        "swept laplacian_heads {k} exceeds model heads {}",
                        self.model.heads
                    )));
                }
            }
        }
        if let Some(dps) = &self.sweep.drop_path {
            if dps.is_empty() {
                return Err(HarnessError::Config(
                    "sweep.drop_path must not be empty when given".into(),
                ));
            }
            for &dp in dps {
                if !(0.0..1.0).contains(&dp) {
                    return Err(HarnessError::Config(format!(
                        "swept drop_path {dp} outside [0, 1)"
                    )));
                }
            }
        }
        if self.sweep.seeds.is_empty() {
            return Err(HarnessError::Config("sweep.seeds must not be empty".into()));
        }
        if self.analysis.measure_limit == 0 {
            return Err(HarnessError::Config(
                "analysis.measure_limit must be at least 1".into(),
            ));
        }
        if let Some(pca_classes) = self.analysis.pca_classes {
            if pca_classes == 0 {
                return Err(HarnessError::Config(
                    "analysis.pca_classes must be at least 1 when given".into(),
                ));
            }
        }
        if !(self.diffusion.dt > 0.0 && self.diffusion.dt <= 1.0) {
            return Err(HarnessError::Config(format!(
                "diffusion.dt {} outside (0, 1]",
                self.diffusion.dt
            )));
        }
        if self.diffusion.seq_len < 2 || self.diffusion.dim == 0 {
            return Err(HarnessError::Config(
                "diffusion needs seq_len of at least 2 and dim of at least 1".into(),
            ));
        }
        if self.output.workers == 0 {
            return Err(HarnessError::Config("output.workers must be at least 1".into()));
        }
        if self.output.formats.is_empty() {
            return Err(HarnessError::Config(
                "output.formats must not be empty".into(),
            ));
        }
        self.check_dataset_shape()?;
        Ok(())
    }

    fn check_dataset_shape(&self) -> HarnessResult<()> {
        match &self.dataset {
            DatasetSpec::Synthetic(spec) => {
                spec.validate()?;
                if self.model.uses_patch_embedding() {
                    return Err(HarnessError::Config(
                        "synthetic token data cannot feed an image-input model".into(),
                    ));
                }
                if spec.dim != self.model.input_token_dim() {
                    return Err(HarnessError::Config(format!(
                        "synthetic dim {} does not match model input dim {}",
                        spec.dim,
                        self.model.input_token_dim()
                    )));
                }
                if spec.seq_len != self.model.seq_len() {
                    return Err(HarnessError::Config(format!(
                        "synthetic seq_len {} does not match model seq_len {}",
                        spec.seq_len,
                        self.model.seq_len()
                    )));
                }
                if spec.classes != self.model.num_classes {
                    return Err(HarnessError::Config(format!(
                        "synthetic classes {} does not match model num_classes {}",
                        spec.classes, self.model.num_classes
                    )));
                }
            }
            DatasetSpec::Idx { .. } => {
                if !self.model.uses_patch_embedding() {
                    return Err(HarnessError::Config(
                        "IDX image data requires an image-input model".into(),
                    ));
                }
            }
            DatasetSpec::Lpds { .. } => {
                if self.model.uses_patch_embedding() {
                    return Err(HarnessError::Config(
                        "token files cannot feed an image-input model".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The model a single sweep cell trains: the base model with the cell's
    /// axis values substituted. `None` leaves the base field untouched.
    pub fn cell_model(&self, k: Option<usize>, drop_path: Option<f64>) -> ModelConfig {
        let mut model = self.model.clone();
        if let Some(k) = k {
            model.head_assignment = AssignmentSpec::Uniform { laplacian_heads: k };
        }
        if let Some(dp) = drop_path {
            model.drop_path_p = dp;
        }
        model
    }
}

pub fn load_config(path: &Path) -> HarnessResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
