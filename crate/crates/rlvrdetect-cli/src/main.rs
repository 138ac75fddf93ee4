//! `rlvrdetect`: sample completions, score membership, analyze completion
//! structure, and evaluate detectors over labeled corpora.
//!
//! Exit codes: 0 success, 1 partial (some prompts failed during a run that
//! otherwise produced output), 2 configuration or input error.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analyze;
mod config;
mod eval;
mod manifest;
mod sample;
mod score;
mod synth;

#[derive(Parser)]
#[command(
    name = "rlvrdetect",
    version,
    about = "Black-box membership scoring for RL-trained language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample completion sets for every prompt in a corpus.
    Sample(sample::SampleArgs),
    /// Score completion sets with one or more detection methods.
    Score(score::ScoreArgs),
    /// Evaluate scores against labels and report AUC per method.
    Eval(eval::EvalArgs),
    /// Profile completion diversity or structural rigidity.
    Analyze(analyze::AnalyzeArgs),
    /// Generate the bundled synthetic benchmark corpus.
    Synth(synth::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sample(args) => sample::run(args),
        Command::Score(args) => score::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Analyze(args) => analyze::run(args),
        Command::Synth(args) => synth::run(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
