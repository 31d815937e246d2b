use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lapform_model::{save_checkpoint, train, AssignmentSpec};

use crate::analysis::analyze_run;
use crate::config::{ExperimentConfig, Format, MeasureSplit, SweepSpec};
use crate::dataset::load_splits;
use crate::emit::{emit_run, write_metrics_csv};
use crate::error::{HarnessError, HarnessResult};

/// One point of the (laplacian_heads, drop_path, seed) grid. `None` axis
/// values keep the model section untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub k: Option<usize>,
    pub drop_path: Option<f64>,
    pub seed: u64,
}

impl Cell {
    /// The value actually trained on the k axis, as a directory label.
    pub fn k_label(&self, cfg: &ExperimentConfig) -> String {
        match self.k {
            Some(k) => k.to_string(),
            None => match &cfg.model.head_assignment {
                AssignmentSpec::Uniform { laplacian_heads } => laplacian_heads.to_string(),
                AssignmentSpec::MixDepth => "mixdepth".into(),
                AssignmentSpec::Interleave { .. } => "interleave".into(),
                AssignmentSpec::Explicit { .. } => "explicit".into(),
            },
        }
    }

    pub fn dp_label(&self, cfg: &ExperimentConfig) -> String {
        self.drop_path.unwrap_or(cfg.model.drop_path_p).to_string()
    }

    pub fn dir_name(&self, cfg: &ExperimentConfig) -> String {
        format!(
            "k{}_dp{}_seed{}",
            self.k_label(cfg),
            self.dp_label(cfg),
            self.seed
        )
    }
}

/// Expands configured sweep axes into the full grid, k outermost and seeds
/// innermost.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let ks: Vec<Option<usize>> = match &cfg.sweep.laplacian_heads {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let dps: Vec<Option<f64>> = match &cfg.sweep.drop_path {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut out = Vec::with_capacity(ks.len() * dps.len() * cfg.sweep.seeds.len());
    for &k in &ks {
        for &dp in &dps {
            for &seed in &cfg.sweep.seeds {
                out.push(Cell {
                    k,
                    drop_path: dp,
                    seed,
                });
            }
        }
    }
    out
}

/// What one finished (or failed) cell left behind.
#[derive(Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub dir: PathBuf,
    pub test_acc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub outcomes: Vec<CellOutcome>,
    pub summary_path: PathBuf,
}

impl ExperimentOutcome {
    pub fn failures(&self) -> Vec<&CellOutcome> {
        self.outcomes.iter().filter(|o| o.error.is_some()).collect()
    }
}

/// Trains and measures one cell inside its own directory. Returns the final
/// test accuracy.
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell, dir: &Path) -> HarnessResult<f64> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let model = cfg.cell_model(cell.k, cell.drop_path);
    model.validate()?;

    // The cell's provenance: everything needed to re-derive its numbers.
    let resolved = ExperimentConfig {
        version: cfg.version,
        model: model.clone(),
        train: cfg.train.clone(),
        dataset: cfg.dataset.clone(),
        sweep: SweepSpec {
            laplacian_heads: cell.k.map(|k| vec![k]),
            drop_path: cell.drop_path.map(|dp| vec![dp]),
            seeds: vec![cell.seed],
        },
        analysis: cfg.analysis.clone(),
        diffusion: cfg.diffusion.clone(),
        output: crate::config::OutputSpec {
            // The recorded config describes this cell, wherever it lives.
            dir: PathBuf::from("."),
            ..cfg.output.clone()
        },
    };
    let mut config_json = serde_json::to_string_pretty(&resolved)
        .map_err(|e| HarnessError::Data(format!("config serialization: {e}")))?;
    config_json.push('\n');
    let config_path = dir.join("config.json");
    fs::write(&config_path, config_json).map_err(|e| HarnessError::io(&config_path, e))?;

    let (train_split, test_split) = load_splits(cfg)?;
    let result = train(
        &model,
        &cfg.train,
        &train_split.input,
        &train_split.labels,
        Some((&test_split.input, &test_split.labels)),
        cell.seed,
    )?;

    if cfg.output.formats.contains(&Format::Csv) {
        write_metrics_csv(&dir.join("metrics.csv"), &result.metrics)?;
    }
    save_checkpoint(&dir.join("checkpoint.lpfm"), &model, &result.params)?;

    let measure = match cfg.analysis.measure_split {
        MeasureSplit::Train => &train_split,
        MeasureSplit::Test => &test_split,
    };
    let artifacts = analyze_run(
        &model,
        &result.params,
        &measure.input,
        &measure.labels,
        measure.num_classes,
        &cfg.analysis,
    )?;
    emit_run(dir, &cfg.output.formats, &artifacts)?;

    let last = result
        .metrics
        .last()
        .ok_or_else(|| HarnessError::Data("training produced no epochs".into()))?;
    last.test_acc
        .ok_or_else(|| HarnessError::Data("training recorded no test accuracy".into()))
}

fn deterministic_mode() -> bool {
    std::env::var("LPFM_DETERMINISTIC").map(|v| v == "1").unwrap_or(false)
}

/// Runs every cell of the grid, then assembles the cross-run summary.
/// Individual cell failures are recorded and do not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> HarnessResult<ExperimentOutcome> {
    cfg.validate()?;
    let grid = cells(cfg);
    let out_root = &cfg.output.dir;
    fs::create_dir_all(out_root).map_err(|e| HarnessError::io(out_root, e))?;

    let workers = if deterministic_mode() {
        1
    } else {
        cfg.output.workers.min(grid.len()).max(1)
    };

    let mut outcomes: Vec<CellOutcome> = Vec::with_capacity(grid.len());
    if workers == 1 {
        for cell in &grid {
            outcomes.push(execute_cell(cfg, cell, out_root));
        }
    } else {
        let slots: Mutex<Vec<Option<CellOutcome>>> =
            Mutex::new((0..grid.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= grid.len() {
                        break;
                    }
                    let outcome = execute_cell(cfg, &grid[i], out_root);
                    slots.lock().unwrap()[i] = Some(outcome);
                });
            }
        });
        outcomes = slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|o| o.expect("every cell executed"))
            .collect();
    }

    let summary_path = out_root.join("summary.csv");
    let summary = summary_csv(cfg, &outcomes);
    fs::write(&summary_path, summary).map_err(|e| HarnessError::io(&summary_path, e))?;

    Ok(ExperimentOutcome {
        outcomes,
        summary_path,
    })
}

fn execute_cell(cfg: &ExperimentConfig, cell: &Cell, out_root: &Path) -> CellOutcome {
    let dir = out_root.join(cell.dir_name(cfg));
    match run_cell(cfg, cell, &dir) {
        Ok(acc) => CellOutcome {
            cell: *cell,
            dir,
            test_acc: Some(acc),
            error: None,
        },
        Err(e) => CellOutcome {
            cell: *cell,
            dir,
            test_acc: None,
            error: Some(e.to_string()),
        },
    }
}

/// Mean and sample standard deviation (n−1); a single run has deviation 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One row per (k, drop_path) pair, aggregating test accuracy over the seeds
/// that actually finished.
pub fn summary_csv(cfg: &ExperimentConfig, outcomes: &[CellOutcome]) -> String {
    let mut out = String::from("laplacian_heads,drop_path,runs,test_acc_mean,test_acc_std\n");
    let mut seen: Vec<(String, String)> = Vec::new();
    for o in outcomes {
        let key = (o.cell.k_label(cfg), o.cell.dp_label(cfg));
        if !seen.contains(&key) {
            seen.push(key);
        }
    }
    for (k_label, dp_label) in seen {
        let accs: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.cell.k_label(cfg) == k_label && o.cell.dp_label(cfg) == dp_label)
            .filter_map(|o| o.test_acc)
            .collect();
        if accs.is_empty() {
            let _ = writeln!(out, "{k_label},{dp_label},0,,");
        } else {
            let (mean, std) = mean_std(&accs);
            let _ = writeln!(out, "{k_label},{dp_label},{},{mean},{std}", accs.len());
        }
    }
    out
}
