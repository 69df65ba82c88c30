mod args;
mod commands;
mod error;
mod scenario;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

/// Caps the worker pool when `ABX_THREADS` is set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ABX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Validation(format!(
            "ABX_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Numerical(format!("cannot start worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Simulate(s) => commands::simulate(s),
        Command::Figures(f) => commands::figures(f),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
