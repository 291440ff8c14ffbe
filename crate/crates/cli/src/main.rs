use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mogp_cli::commands::{
    cmd_evaluate, cmd_generate, cmd_score, cmd_train, cmd_whatif, EvaluateArgs, GenerateArgs, ScoreArgs, TrainArgs,
    WhatifArgs,
};

/// Personalized deterioration risk from irregular vital-sign streams.
#[derive(Parser)]
#[command(name = "mogp", version)]
struct Cli {
    /// Only print warnings and errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic cohort.
    Generate(GenerateArgs),
    /// Train a model bundle on a cohort.
    Train(TrainArgs),
    /// Write risk traces for every patient of a cohort or patient file.
    Score(ScoreArgs),
    /// Compare risk traces under original and overridden admission features.
    Whatif(WhatifArgs),
    /// Stratified cross-validation with optional ablation and baselines.
    Evaluate(EvaluateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut stdout = std::io::stdout().lock();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a, &mut stdout),
        Command::Train(a) => cmd_train(a, &mut stdout),
        Command::Score(a) => cmd_score(a, &mut stdout),
        Command::Whatif(a) => cmd_whatif(a, &mut stdout),
        Command::Evaluate(a) => cmd_evaluate(a, &mut stdout),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
