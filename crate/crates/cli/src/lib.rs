//! The `pots` pipeline runner: generate or ingest data, pack it into a
//! container, corrupt it for evaluation, train, evaluate, predict and
//! inspect. Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 training divergence.

mod commands;
pub mod config;
mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pots_models::{ModelKind, SelectionMetric, Task};

pub use config::{seed_offset, Settings};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "pots",
    version,
    about = "Partially-observed time series pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset (`.csv` or `.pots` by extension).
    GenData(GenDataArgs),
    /// Convert a long-format CSV into a `.pots` container.
    Pack(PackArgs),
    /// Hide observed cells at random; writes OUT and its `.originals` twin.
    Corrupt(CorruptArgs),
    /// Fit a model and write a `.pmdl` artifact.
    Train(TrainArgs),
    /// Print the task's metric report as key=value lines.
    Evaluate(EvaluateArgs),
    /// Write task outputs as CSV (stdout without --out).
    Predict(PredictArgs),
    /// Print the header of a `.pots` container or `.pmdl` artifact.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat JSON settings file; flags take precedence over its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Global seed; each stage adds a fixed offset.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub n_features: Option<usize>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    /// Fraction of cells missing in the generated data [default: 0.1].
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input CSV.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Fraction of each sample's observed cells to hide [default: 0.2].
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Validation data; without it a hold-out is drawn from --data.
    #[arg(long, value_name = "PATH")]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Stop after this many epochs without improvement; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    /// val_loss or val_accuracy.
    #[arg(long, value_parser = config::parse_selection)]
    pub selection_metric: Option<SelectionMetric>,
    /// Trailing steps held out for forecasting [default: 1].
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Model hyperparameter, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = config::parse_param)]
    pub params: Vec<(String, String)>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// Trained `.pmdl` artifact.
    #[arg(long, value_name = "PATH")]
    pub artifact: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Uncorrupted twin of --data for imputation [default: sibling `.originals` file].
    #[arg(long, value_name = "PATH")]
    pub originals: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[arg(long, value_name = "PATH")]
    pub artifact: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse()
        .map_err(|e: pots_models::ModelError| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse()
        .map_err(|e: pots_models::ModelError| e.to_string())
}

/// Flag layer merged over the config file named by `--config`.
fn resolve(common: &Common, flags: Settings) -> Result<Settings> {
    let flags = Settings {
        seed: common.seed,
        ..flags
    };
    match &common.config {
        Some(path) => Ok(flags.over(Settings::from_file(path)?)),
        None => Ok(flags),
    }
}

/// Runs one command, writing reports to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData(a) => {
            let s = resolve(
                &a.common,
                Settings {
                    n_samples: a.n_samples,
                    n_steps: a.n_steps,
                    n_features: a.n_features,
                    n_classes: a.n_classes,
                    missing_rate: a.missing_rate,
                    out: a.out,
                    ..Settings::default()
                },
            )?;
            commands::gen_data(&s, out)
        }
        Command::Pack(a) => {
            let s = resolve(
                &a.common,
                Settings {
                    data: a.data,
                    out: a.out,
                    ..Settings::default()
                },
            )?;
            commands::pack(&s, out)
        }
        Command::Corrupt(a) => {
            let s = resolve(
                &a.common,
                Settings {
                    data: a.data,
                    missing_rate: a.missing_rate,
                    out: a.out,
                    ..Settings::default()
                },
            )?;
            commands::corrupt(&s, out)
        }
        Command::Train(a) => {
            let s = resolve(
                &a.common,
                Settings {
                    task: a.task,
                    model: a.model,
                    data: a.data,
                    val: a.val,
                    workers: a.workers,
                    epochs: a.epochs,
                    batch_size: a.batch_size,
                    lr: a.lr,
                    patience: a.patience,
                    selection_metric: a.selection_metric,
                    horizon: a.horizon,
                    params: a.params.into_iter().collect(),
                    out: a.out,
                    ..Settings::default()
                },
            )?;
            commands::train(&s, out)
        }
        Command::Evaluate(a) => {
            let s = resolve(
                &a.common,
                Settings {
                    task: a.task,
                    artifact: a.artifact,
                    data: a.data,
                    originals: a.originals,
                    horizon: a.horizon,
                    ..Settings::default()
                },
            )?;
            commands::evaluate(&s, out)
        }
        Command::Predict(a) => {
            let s = resolve(
                &a.common,
                Settings {
                    task: a.task,
                    artifact: a.artifact,
                    data: a.data,
                    horizon: a.horizon,
                    out: a.out,
                    ..Settings::default()
                },
            )?;
            commands::predict(&s, out)
        }
        Command::Inspect(a) => commands::inspect(&a.path, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli.command, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
