use clap::{Parser, Subcommand};

use sentigrid::cli::{self, BenchArgs, CheckArgs, EvalArgs, PredictArgs, TrainArgs};

/// Aspect/opinion triplet extraction with span-level grid tagging.
#[derive(Parser)]
#[command(name = "sentigrid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint, training log, and run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint: exact-match P/R/F1 with AE/OE breakdown.
    Eval(EvalArgs),
    /// Print decoded annotations for a dataset.
    Predict(PredictArgs),
    /// Run a property suite: gridroundtrip | gradcheck | mdgru-equiv.
    Check(CheckArgs),
    /// Time sequential vs wavefront grid recurrence evaluation.
    Bench(BenchArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cli::run_train(args),
        Command::Eval(args) => cli::run_eval(args),
        Command::Predict(args) => cli::run_predict(args),
        Command::Check(args) => cli::run_check(args),
        Command::Bench(args) => cli::run_bench(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
