//! `flowcorr` — build, correct and evaluate flow-map surrogates of
//! dynamical systems.
//!
//! Exit codes: 0 on success, 2 on configuration/validation errors, 1 on
//! runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowcorr_cli::config::{self, ExperimentConfig, RawConfig, ValidationError};
use flowcorr_cli::pipeline::{run_pipeline, Stage};
use flowcorr_cli::presets;

#[derive(Parser)]
#[command(
    name = "flowcorr",
    about = "Flow-map surrogates with transfer-learning model correction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment configuration file (TOML). Optional for `reproduce`.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Uniformly shrink data counts and epoch budgets (0 < scale <= 1).
    #[arg(long)]
    scale: Option<f64>,

    /// Master seed; derived seeds for each phase come from it.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for datasets, checkpoints, curves and the manifest.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the low- and high-fidelity datasets.
    Generate(CommonOpts),
    /// Train the prior flow-map surrogate from the low-fidelity dataset.
    TrainPrior(CommonOpts),
    /// Correct the prior with the high-fidelity dataset.
    Correct(CommonOpts),
    /// Produce error curves and example trajectories.
    Evaluate(CommonOpts),
    /// Run a named experiment preset end to end.
    Reproduce {
        /// One of the preset experiments.
        preset: String,
        #[command(flatten)]
        opts: CommonOpts,
        /// Run only this stage (generate, train-prior, correct, evaluate).
        #[arg(long)]
        stage: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(value) = std::env::var("FLOWCORR_WORKERS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => flowcorr::parallel::set_worker_threads(n),
            _ => {
                eprintln!("error: FLOWCORR_WORKERS must be a positive integer, got `{value}`");
                return ExitCode::from(2);
            }
        }
    }

    let cli = Cli::parse();
    let (cfg, stage, out) = match prepare(&cli.command) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    match run_pipeline(&cfg, stage, &out) {
        Ok(manifest) => {
            for (name, record) in &manifest.stages {
                let status = if record.skipped { "skipped (up to date)" } else { "ran" };
                println!("{name}: {status} [{:.1}s]", record.wall_time_s);
            }
            println!("manifest: {}", out.join(flowcorr_cli::pipeline::MANIFEST_NAME).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type Prepared = (ExperimentConfig, Option<Stage>, PathBuf);

fn prepare(command: &Command) -> Result<Prepared, ValidationError> {
    match command {
        Command::Generate(opts) => stage_command(opts, Stage::Generate),
        Command::TrainPrior(opts) => stage_command(opts, Stage::TrainPrior),
        Command::Correct(opts) => stage_command(opts, Stage::Correct),
        Command::Evaluate(opts) => stage_command(opts, Stage::Evaluate),
        Command::Reproduce { preset, opts, stage } => {
            let stage = match stage {
                Some(name) => Some(Stage::from_name(name).ok_or_else(|| {
                    ValidationError(format!(
                        "unknown stage `{name}` (expected one of generate, train-prior, \
                         correct, evaluate)"
                    ))
                })?),
                None => None,
            };
            if presets::preset(preset).is_none() {
                return Err(ValidationError(format!(
                    "unknown preset `{preset}` (available: {})",
                    presets::PRESET_NAMES.join(", ")
                )));
            }
            let mut cfg = match &opts.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| {
                        ValidationError(format!("cannot read `{}`: {e}", path.display()))
                    })?;
                    let mut raw: RawConfig = toml::from_str(&text)
                        .map_err(|e| ValidationError(format!("{}: {e}", path.display())))?;
                    match &raw.experiment {
                        Some(name) if name != preset => {
                            return Err(ValidationError(format!(
                                "config file names experiment `{name}` but the command asks \
                                 for preset `{preset}`"
                            )))
                        }
                        _ => raw.experiment = Some(preset.clone()),
                    }
                    config::resolve(raw)?
                }
                None => presets::preset(preset).expect("checked above"),
            };
            apply_overrides(&mut cfg, opts)?;
            Ok((cfg, stage, opts.out.clone()))
        }
    }
}

fn stage_command(opts: &CommonOpts, stage: Stage) -> Result<Prepared, ValidationError> {
    let path = opts.config.as_ref().ok_or_else(|| {
        ValidationError(format!("`{}` requires --config <path>", stage.name()))
    })?;
    let mut cfg = config::parse_config(path)?;
    apply_overrides(&mut cfg, opts)?;
    Ok((cfg, Some(stage), opts.out.clone()))
}

fn apply_overrides(cfg: &mut ExperimentConfig, opts: &CommonOpts) -> Result<(), ValidationError> {
    if let Some(scale) = opts.scale {
        cfg.scale = scale;
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.validate()
}
