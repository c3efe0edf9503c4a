//! `indexlab` — batch pipeline for daily index forecasting.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{cmd_forecast, cmd_ingest, cmd_report, cmd_run, cmd_tune, GlobalOpts};

#[derive(Parser)]
#[command(
    name = "indexlab",
    version,
    about = "Daily index forecasting pipeline: ingest, tune, run, forecast, report"
)]
struct Cli {
    /// Experiment config file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed; seeded commands are bit-reproducible
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Progress on stderr plus a per-cell access log
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and clean a raw price CSV into a validated series
    Ingest {
        /// Raw CSV with date and close columns
        csv: PathBuf,
        /// Index label, e.g. SP500 or RUT
        #[arg(long)]
        index: String,
    },
    /// Search hyperparameters for one index/slice/model cell
    Tune {
        #[arg(long)]
        index: String,
        #[arg(long)]
        slice: String,
        /// forest or lstm
        #[arg(long)]
        model: String,
    },
    /// Full protocol: tune (or use pinned params), fit, and evaluate every
    /// index x slice x model cell; writes reports and summary.csv
    Run,
    /// Recursive multi-step forecast from a saved model
    Forecast {
        /// model.json written by `run`
        #[arg(long)]
        model: PathBuf,
        /// Price CSV supplying the final window
        #[arg(long)]
        series: PathBuf,
        /// Number of one-step forecasts to chain
        #[arg(long)]
        steps: usize,
    },
    /// Rebuild the summary table from fit reports on disk
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = GlobalOpts {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        verbose: cli.verbose,
    };
    let result = match &cli.command {
        Command::Ingest { csv, index } => cmd_ingest(&opts, csv, index),
        Command::Tune { index, slice, model } => cmd_tune(&opts, index, slice, model),
        Command::Run => cmd_run(&opts),
        Command::Forecast { model, series, steps } => cmd_forecast(&opts, model, series, *steps),
        Command::Report => cmd_report(&opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
