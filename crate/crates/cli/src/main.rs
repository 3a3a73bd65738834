//! `susl`: ingest, train, evaluate, search, embed, sample and report.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! divergence.

mod commands;
mod error;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::spec::{SpecArgs, THREADS_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "susl",
    version,
    about = "Semi-unsupervised time-series classification with a Gaussian-mixture generative model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a raw dataset into a canonical bundle in the output directory.
    Ingest {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Train one model; writes model.ckpt, final.ckpt, history.csv and spec.toml.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Score a checkpoint on the test split; writes eval_* files.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Random hyperparameter search; writes trials.jsonl and best.ckpt.
    Search {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Export latent means of the training split to embeddings.csv.
    Embed {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Decode draws from one class slot's prior to samples.csv.
    Sample {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Slot index; known classes come first, in bundle order.
        #[arg(long)]
        class: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Compare regimes across eval output directories.
    Report {
        /// Directories written by `susl eval`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Ingest { spec } => commands::ingest(&spec),
        Command::Train { spec } => commands::train(&spec),
        Command::Eval { checkpoint, spec } => commands::eval(&checkpoint, &spec),
        Command::Search { spec } => commands::search(&spec),
        Command::Embed { checkpoint, spec } => commands::embed(&checkpoint, &spec),
        Command::Sample { checkpoint, class, count, spec } => commands::sample(&checkpoint, class, count, &spec),
        Command::Report { runs, output } => commands::report(&runs, output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("susl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
