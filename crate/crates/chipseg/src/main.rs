use std::process::ExitCode;

use anyhow::Result;
use chipseg::commands;
use chipseg::RunConfig;
use clap::{Parser, Subcommand};

/// Chip-wise defect segmentation of wafer photoluminescence maps.
#[derive(Parser)]
#[command(name = "chipseg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic wafer dataset.
    Generate(Settings),
    /// Train a network on a dataset directory.
    Train(Settings),
    /// Score a checkpoint on a dataset split.
    Eval(Settings),
    /// Predict class maps for a wafer file or dataset directory.
    Predict(Settings),
    /// K-fold cross-validation.
    Xval(Settings),
    /// Architecture, skip and class-weight ablations.
    Ablate(Settings),
}

#[derive(clap::Args)]
#[command(after_help = settings_help())]
struct Settings {
    /// `--key value` settings; `--config FILE` loads a key = value file first.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "SETTINGS"
    )]
    args: Vec<String>,
}

fn settings_help() -> String {
    format!("Settings:\n{}", RunConfig::key_help())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    let config = |s: &Settings| RunConfig::from_args(&s.args);
    match command {
        Command::Generate(s) => commands::generate::run(&config(&s)?).map(drop),
        Command::Train(s) => commands::train::run(&config(&s)?).map(drop),
        Command::Eval(s) => commands::eval::run(&config(&s)?).map(drop),
        Command::Predict(s) => commands::predict::run(&config(&s)?).map(drop),
        Command::Xval(s) => commands::xval::run(&config(&s)?).map(drop),
        Command::Ablate(s) => commands::ablate::run(&config(&s)?).map(drop),
    }
}
