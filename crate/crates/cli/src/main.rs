//! `conform` — score, calibrate, infer, evaluate, and report on structured
//! prediction tasks driven by language model confidence scores.
//!
//! Every subcommand takes a declarative JSON config; flags override config
//! fields. Exit codes distinguish config errors (2), data errors (3), and
//! backend errors (4).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use conform::experiments::runner::{run_until, Stage};
use conform::experiments::{CalibrationMode, ExperimentConfig, ExperimentError, MetricsReport};

#[derive(Parser)]
#[command(name = "conform", version, about = "Constrained inference over LLM confidence scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the task ("morality" or "coref").
    #[arg(long)]
    task: Option<String>,
    /// Override the dataset path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Override the elicitation strategies (repeatable).
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    /// Override the shot count (0, 2, or 5).
    #[arg(long)]
    shots: Option<u32>,
    /// Disable the task's hard constraints.
    #[arg(long)]
    no_constraints: bool,
    /// Override the backend endpoint (also settable via CONFORM_ENDPOINT).
    #[arg(long)]
    endpoint: Option<String>,
    /// Override the cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the fold count.
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Elicit and persist score tables for every fold.
    Score(CommonArgs),
    /// Train calibrators on the train splits (implies scoring).
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Calibration objective: "local" or "global".
        #[arg(long, default_value = "local")]
        mode: String,
    },
    /// Run constrained and unconstrained inference (implies scoring and
    /// calibration).
    Infer(CommonArgs),
    /// Compute metrics and write report.json (implies all earlier stages).
    Evaluate(CommonArgs),
    /// Full pipeline plus markdown and SVG report renderings.
    Report(CommonArgs),
}

fn apply_overrides(config: &mut ExperimentConfig, args: &CommonArgs) -> Result<(), ExperimentError> {
    if let Some(task) = &args.task {
        config.task = match task.as_str() {
            "morality" => conform::experiments::TaskKind::Morality,
            "coref" => conform::experiments::TaskKind::Coref,
            other => {
                return Err(ExperimentError::Config(format!("unknown task {other:?}")));
            }
        };
    }
    if let Some(dataset) = &args.dataset {
        config.dataset = dataset.clone();
    }
    if !args.strategies.is_empty() {
        config.strategies = args.strategies.clone();
    }
    if let Some(shots) = args.shots {
        config.shots = shots;
    }
    if args.no_constraints {
        config.constraints.enabled = false;
    }
    if let Some(endpoint) = &args.endpoint {
        config.backend.endpoint = endpoint.clone();
    }
    if let Some(dir) = &args.cache_dir {
        config.cache_dir = dir.clone();
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(folds) = args.folds {
        config.folds = folds;
    }
    config.validate()
}

fn run(command: &Command) -> Result<Option<MetricsReport>, ExperimentError> {
    let (common, stage) = match command {
        Command::Score(c) => (c, Stage::Score),
        Command::Calibrate { common, .. } => (common, Stage::Calibrate),
        Command::Infer(c) => (c, Stage::Infer),
        Command::Evaluate(c) => (c, Stage::Evaluate),
        Command::Report(c) => (c, Stage::Report),
    };
    let mut config = ExperimentConfig::load(&common.config)?;
    apply_overrides(&mut config, common)?;
    if let Command::Calibrate { mode, .. } = command {
        config.calibration = match mode.as_str() {
            "local" => CalibrationMode::Local,
            "global" => CalibrationMode::Global,
            "none" => CalibrationMode::None,
            other => {
                return Err(ExperimentError::Config(format!(
                    "unknown calibration mode {other:?}"
                )))
            }
        };
    }
    run_until(&config, stage)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(Some(report)) => {
            for (key, metric) in &report.summary {
                match metric.stdev {
                    Some(sd) => println!("{key}: {:.4} ± {sd:.4}", metric.mean),
                    None => println!("{key}: {:.4}", metric.mean),
                }
            }
            for (tag, count) in &report.violations_constrained {
                println!("violations[{tag}] constrained: {count}");
            }
            for (tag, count) in &report.violations_unconstrained {
                println!("violations[{tag}] unconstrained: {count}");
            }
            println!("report written to {}", report.config.output_dir.display());
        }
        Ok(None) => println!("done"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
