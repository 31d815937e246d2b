use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lapform_harness::{
    cells, gen_synthetic, load_config, load_splits, recompute_artifacts, run_cell, run_diffusion,
    run_experiment, save_lpds, verify_run, DatasetSpec, ExperimentConfig, Format, MeasureSplit,
    Overrides, VERIFY_TOL,
};
use lapform_model::{grad_check, GradCheckConfig, ParamSet};

#[derive(Parser)]
#[command(
    name = "lapform",
    version,
    about = "Train and dissect small transformers with Laplacian attention heads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Experiment config file (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Single seed, replacing the configured seed list.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory, replacing the configured one.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Concurrent sweep workers.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Emitted file formats (repeatable or comma-separated).
    #[arg(long = "format", value_enum, value_delimiter = ',', value_name = "FMT")]
    formats: Vec<Format>,
    /// Laplacian head counts to sweep, comma-separated.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    laplacian_heads: Option<Vec<usize>>,
    /// Drop-path rates to sweep, comma-separated.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    drop_path: Option<Vec<f64>>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            formats: if self.formats.is_empty() {
                None
            } else {
                Some(self.formats.clone())
            },
            laplacian_heads: self.laplacian_heads.clone(),
            drop_path: self.drop_path.clone(),
        }
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        cfg.apply_overrides(&self.overrides());
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct RunDirArgs {
    /// A finished run directory (config.json + checkpoint.lpfm inside).
    #[arg(long, value_name = "DIR")]
    run_dir: PathBuf,
    /// Formats to emit, overriding the run's config.
    #[arg(long = "format", value_enum, value_delimiter = ',', value_name = "FMT")]
    formats: Vec<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset as LPDS token files.
    GenData(CommonArgs),
    /// Train the single configured cell, writing artifacts into the output
    /// directory itself.
    Train(CommonArgs),
    /// Recompute and re-emit geometry artifacts for a finished run.
    Analyze(RunDirArgs),
    /// Train every (laplacian_heads, drop_path, seed) cell, then summarize.
    Sweep(CommonArgs),
    /// Iterate the token heat equation and record the collapse trajectory.
    Diffuse(CommonArgs),
    /// Compare taped gradients with central finite differences.
    GradCheck(CommonArgs),
    /// Recompute a run's report from checkpoint + dataset + config and
    /// match it against the stored one.
    Verify(RunDirArgs),
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(args) => gen_data(&args),
        Command::Train(args) => train_one(&args),
        Command::Analyze(args) => analyze_dir(&args),
        Command::Sweep(args) => sweep(&args),
        Command::Diffuse(args) => diffuse(&args),
        Command::GradCheck(args) => check_gradients(&args),
        Command::Verify(args) => verify_dir(&args),
    }
}

fn gen_data(args: &CommonArgs) -> Result<()> {
    let mut cfg = args.load()?;
    let spec = match &mut cfg.dataset {
        DatasetSpec::Synthetic(spec) => spec,
        _ => bail!("gen-data needs a synthetic dataset source in the config"),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let train = gen_synthetic(spec, MeasureSplit::Train)?;
    let test = gen_synthetic(spec, MeasureSplit::Test)?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let train_path = dir.join("train.lpds");
    let test_path = dir.join("test.lpds");
    save_lpds(&train_path, &train)?;
    save_lpds(&test_path, &test)?;
    println!(
        "wrote {} ({} sequences) and {} ({} sequences)",
        train_path.display(),
        train.labels.len(),
        test_path.display(),
        test.labels.len()
    );
    Ok(())
}

fn train_one(args: &CommonArgs) -> Result<()> {
    let cfg = args.load()?;
    let grid = cells(&cfg);
    if grid.len() != 1 {
        bail!(
            "train runs exactly one cell, but {} are configured; \
             use sweep, or narrow --laplacian-heads/--drop-path/--seed",
            grid.len()
        );
    }
    let acc = run_cell(&cfg, &grid[0], &cfg.output.dir)?;
    println!(
        "trained {} into {}: test accuracy {acc}",
        grid[0].dir_name(&cfg),
        cfg.output.dir.display()
    );
    Ok(())
}

fn analyze_dir(args: &RunDirArgs) -> Result<()> {
    let (cfg, artifacts) = recompute_artifacts(&args.run_dir)?;
    let formats = if args.formats.is_empty() {
        cfg.output.formats.clone()
    } else {
        args.formats.clone()
    };
    let written = lapform_harness::emit_run(&args.run_dir, &formats, &artifacts)?;
    println!(
        "measured {} sequences; wrote {} files to {}",
        artifacts.measured,
        written.len(),
        args.run_dir.display()
    );
    Ok(())
}

fn sweep(args: &CommonArgs) -> Result<()> {
    let cfg = args.load()?;
    let outcome = run_experiment(&cfg)?;
    for o in &outcome.outcomes {
        match (&o.error, o.test_acc) {
            (Some(err), _) => println!("{}: FAILED: {err}", o.cell.dir_name(&cfg)),
            (None, Some(acc)) => println!("{}: test accuracy {acc}", o.cell.dir_name(&cfg)),
            (None, None) => println!("{}: finished", o.cell.dir_name(&cfg)),
        }
    }
    println!("summary: {}", outcome.summary_path.display());
    let failures = outcome.failures();
    if !failures.is_empty() {
        bail!("{} of {} cells failed", failures.len(), outcome.outcomes.len());
    }
    Ok(())
}

fn diffuse(args: &CommonArgs) -> Result<()> {
    let mut cfg = args.load()?;
    if let Some(seed) = args.seed {
        cfg.diffusion.seed = seed;
    }
    let out = run_diffusion(&cfg.diffusion)?;
    if cfg.output.formats.contains(&Format::Csv) {
        let dir = &cfg.output.dir;
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("trajectory.csv");
        lapform_harness::write_trajectory_csv(&path, &out.points)?;
        println!("wrote {}", path.display());
    }
    println!(
        "{} steps at dt {}: row spread {:.3e} -> {:.3e}, block equivalence {:.3e}",
        cfg.diffusion.steps,
        cfg.diffusion.dt,
        out.points[0].row_spread,
        out.final_spread,
        out.equivalence
    );
    Ok(())
}

fn check_gradients(args: &CommonArgs) -> Result<()> {
    let cfg = args.load()?;
    let model = cfg.cell_model(None, None);
    let seed = args.seed.unwrap_or(cfg.sweep.seeds[0]);
    let params = ParamSet::init(&model, seed)?;
    let (train_split, _) = load_splits(&cfg)?;
    let take = train_split.labels.len().min(4);
    let ids: Vec<usize> = (0..take).collect();
    let input = train_split.input.select(&ids);
    let labels = &train_split.labels[..take];
    let report = grad_check(&model, &params, &input, labels, &GradCheckConfig::default())?;
    println!(
        "checked {} entries: {} failures, worst relative error {:.3e} ({}[{}] analytic {:.6e} vs fd {:.6e})",
        report.checked,
        report.failures,
        report.worst_rel,
        report.worst_param,
        report.worst_index,
        report.analytic_at_worst,
        report.fd_at_worst
    );
    if !report.passed() {
        bail!("gradient check failed");
    }
    Ok(())
}

fn verify_dir(args: &RunDirArgs) -> Result<()> {
    let verdict = verify_run(&args.run_dir, VERIFY_TOL)?;
    println!(
        "compared {} fields: worst |difference| {:.3e} at {} (tolerance {:.0e})",
        verdict.fields, verdict.worst_diff, verdict.worst_field, verdict.tol
    );
    if !verdict.passed() {
        bail!("stored report does not match the recomputation");
    }
    println!("report verified");
    Ok(())
}
