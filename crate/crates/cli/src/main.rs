//! `featacq`: train, sweep, evaluate and summarize budgeted feature acquisition models.

mod commands;
mod error;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "featacq", version, about = "Budgeted sequential feature acquisition")]
struct Cli {
    /// Cap on worker threads; 1 gives the reference single-threaded run.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model on the training third of a dataset.
    Train(TrainArgs),
    /// Train a grid of configs and select the validation Pareto front.
    Sweep(SweepArgs),
    /// Measure accuracy and cost of a saved model.
    Eval(EvalArgs),
    /// Interpolate accuracy at cost levels along a curve CSV.
    Curve(CurveArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Headered CSV with numeric features and one label column.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Label column name, or a zero-based column index.
    #[arg(long)]
    pub label: Option<String>,
    /// `uniform`, `linear` or `file:PATH` (one cost per line).
    #[arg(long)]
    pub costs: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON training config; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for the split, initialization, training and evaluation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Episodes per example when measuring accuracy and cost.
    #[arg(long)]
    pub eval_samples: Option<usize>,
    /// Cost axis of reported curves: `raw` or `normalized` (default: normalized for uniform costs).
    #[arg(long)]
    pub axis: Option<String>,
    /// Repeat the run recorded in this manifest instead of reading flags.
    #[arg(long, conflicts_with_all = ["data", "label", "costs", "config", "seed", "eval_samples", "axis"])]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, conflicts_with = "manifest")]
    pub lambda: Option<f64>,
    #[arg(long, conflicts_with = "manifest")]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// JSON array of partial configs, inline or as a file path, each merged over `--config`.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub grid: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory written by `train` or `sweep`.
    #[arg(long, conflicts_with_all = ["params", "data", "label", "costs", "standardization"])]
    pub run: Option<PathBuf>,
    /// Model id inside a sweep run, e.g. `m003`.
    #[arg(long, requires = "run")]
    pub model: Option<String>,
    /// Split of the run's dataset: `train`, `valid` or `test`.
    #[arg(long, default_value = "test", requires = "run")]
    pub split: String,
    /// Saved parameters, evaluated on every row of `--data`.
    #[arg(long, required_unless_present = "run", requires_all = ["data", "label"])]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Standardization file to apply to `--data`.
    #[arg(long)]
    pub standardization: Option<PathBuf>,
    /// Evaluation seed (default: the run's).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episodes per example (default: the run's).
    #[arg(long)]
    pub eval_samples: Option<usize>,
    /// Write one trace per episode to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Result CSV (default: `<run>/eval/<model>-<split>.csv`).
    #[arg(long, required_unless_present = "run")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    /// CSV with header model_id,mean_cost,normalized_cost,accuracy.
    #[arg(long)]
    pub curve: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.75,0.5,0.25")]
    pub levels: Vec<f64>,
    /// `normalized` reads levels as fractions of total cost, `raw` as costs.
    #[arg(long, default_value = "normalized")]
    pub axis: String,
    /// Write `level,accuracy` rows here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a line plot of the curve here.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global thread pool is configured once");
    }

    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Eval(a) => commands::eval(a),
        Command::Curve(a) => commands::curve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
