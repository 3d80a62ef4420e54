//! Config-driven command line for the regdetect toolkit.
//!
//! Subcommands: `synth` (emit a toy dataset CSV), `train` (fit and
//! serialize a model bundle), `score` (score a CSV with a bundle),
//! `bench` (the full benchmark), `plotdata` (paired-error heatmap grids)
//! and `check` (gradient and invariant self-tests).
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure. Flags
//! override config fields, which override defaults. Every output file
//! gets a `<name>.meta.json` sidecar carrying the resolved config hash.

mod checks;
mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "regdetect", version, about = "Detect unreliable regression predictions")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV from the config's toy spec.
    Synth(SynthArgs),
    /// Train the regressor and estimators; serialize a model bundle.
    Train(TrainArgs),
    /// Score a CSV with a trained bundle and dump per-row scores.
    Score(ScoreArgs),
    /// Run the full benchmark and emit report tables.
    Bench(BenchArgs),
    /// Export per-class paired-error histogram grids.
    Plotdata(PlotArgs),
    /// Run gradient and invariant self-tests.
    Check,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the configured seeds (comma-separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the configured methods (comma-separated).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Override the configured epsilons (comma-separated).
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Toy dataset name from the config (default: first toy entry).
    #[arg(long)]
    dataset: Option<String>,
    /// Sample count override.
    #[arg(long)]
    n: Option<usize>,
    /// Generation seed (default: first configured seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// CSV dataset name from the config (default: first csv entry).
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Trained bundle produced by `train`.
    #[arg(long)]
    bundle: PathBuf,
    /// CSV with the same schema as the training data.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset name from the config (default: first entry).
    #[arg(long)]
    dataset: Option<String>,
    /// Estimator backing the sampler for CSV datasets: CG, SQR or MIX.
    #[arg(long, default_value = "CG")]
    estimator: String,
}

/// Errors are split by exit code: validation problems exit 1, runtime
/// failures exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<regdetect::Error> for CliError {
    fn from(e: regdetect::Error) -> Self {
        use regdetect::Error as E;
        match e {
            E::InvalidConfig(_)
            | E::InvalidParam(_)
            | E::InvalidSplit(_)
            | E::InvalidDataset(_)
            | E::EmptyGrid => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses the argument vector and runs the selected subcommand.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through this path
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth(args) => commands::synth(&args),
        Command::Train(args) => commands::train(&args),
        Command::Score(args) => commands::score(&args),
        Command::Bench(args) => commands::bench(&args),
        Command::Plotdata(args) => commands::plotdata(&args),
        Command::Check => checks::run_all(),
    };
    match outcome {
        Ok(()) => 0,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}
