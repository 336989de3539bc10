//! Command-line surface for the EEG style transfer network: synthetic data
//! generation, training, evaluation, the ablation benchmark, loss-weight
//! sweeps, report emission and the electrode contribution export.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error[usage]: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error[runtime]: {msg}");
            ExitCode::from(1)
        }
    }
}
