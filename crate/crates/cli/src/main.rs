//! `dsgnn`: dataset generation, training, sweeps, evaluation, and
//! embedding export for deeply-supervised GNN experiments.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime
//! divergence (NaN loss).

mod commands;
mod config;
mod data;
mod output;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dsgnn",
    version,
    about = "Deeply-supervised GNN experiment toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the on-disk formats.
    GenSynthetic(commands::gen::GenArgs),
    /// Train one model from a config with singleton grids.
    Train(commands::train::TrainArgs),
    /// Run the full evaluation protocol over the config's grids.
    Sweep(commands::sweep::SweepArgs),
    /// Evaluate a checkpoint on one dataset split.
    Eval(commands::eval::EvalArgs),
    /// Export per-layer node embeddings and over-smoothing diagnostics.
    ExportEmbeddings(commands::export::ExportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let outcome = match cli.command {
        Command::GenSynthetic(args) => commands::gen::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Sweep(args) => commands::sweep::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::ExportEmbeddings(args) => commands::export::run(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Master seed resolution: the `DSGNN_SEED` environment variable overrides
/// the config seed, and the override is logged.
pub(crate) fn effective_seed(config_seed: u64) -> (u64, bool) {
    match std::env::var("DSGNN_SEED") {
        Ok(raw) => match raw.parse::<u64>() {
            Ok(seed) => {
                eprintln!("seed overridden by DSGNN_SEED={seed}");
                (seed, true)
            }
            Err(_) => {
                eprintln!("ignoring non-integer DSGNN_SEED={raw:?}");
                (config_seed, false)
            }
        },
        Err(_) => (config_seed, false),
    }
}
