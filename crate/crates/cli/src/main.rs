//! `valprof`: dialog value profiling from the command line.
//!
//! Subcommands cover the whole pipeline: synthetic corpus generation,
//! training, evaluation, per-dialog value profiling, quantile-band
//! analytics, high-value sentence extraction, candidate re-ranking,
//! training-weight emission and a streaming serve mode.

mod commands;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "valprof", version, about = "dialog value profiling")]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Model file produced by `train`.
    #[arg(short = 'm', long, global = true)]
    model: Option<PathBuf>,

    /// Quantile band CSV produced by `curves`.
    #[arg(long, global = true)]
    band: Option<PathBuf>,

    /// Token window length.
    #[arg(long, global = true, default_value_t = 512)]
    max_len: usize,

    /// Consecutive below-P10 turns before a bot-failure flag.
    #[arg(long, global = true, default_value_t = 3)]
    patience: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic weak-signal corpus with a planted oracle.
    GenCorpus(commands::GenCorpusArgs),
    /// Train the reference encoder and bundle vocab, prior and calibration
    /// into one model file.
    Train(commands::TrainArgs),
    /// Accuracy and calibration metrics on a labeled corpus.
    Eval(commands::EvalArgs),
    /// Write one value-trace JSONL line per input dialog.
    Profile(commands::ProfileArgs),
    /// Point-wise quantile band CSV over trace turn values.
    Curves(commands::CurvesArgs),
    /// Top positive / negative / near-zero reward turns.
    Inspect(commands::InspectArgs),
    /// Re-rank generator candidates by ensembling their scores with value
    /// rewards.
    Rerank(commands::RerankArgs),
    /// Emit per-sample training weights from estimated target rewards.
    Weights(commands::WeightsArgs),
    /// Stream dialog events over stdin/stdout (or TCP) and emit per-turn
    /// values live.
    Serve(commands::ServeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let globals = commands::Globals {
        seed: cli.seed,
        model: cli.model,
        band: cli.band,
        max_len: cli.max_len,
        patience: cli.patience,
    };
    let result = match cli.command {
        Command::GenCorpus(args) => commands::gen_corpus(&globals, args),
        Command::Train(args) => commands::train(&globals, args),
        Command::Eval(args) => commands::eval(&globals, args),
        Command::Profile(args) => commands::profile(&globals, args),
        Command::Curves(args) => commands::curves(&globals, args),
        Command::Inspect(args) => commands::inspect(&globals, args),
        Command::Rerank(args) => commands::rerank(&globals, args),
        Command::Weights(args) => commands::weights(&globals, args),
        Command::Serve(args) => commands::serve(&globals, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
