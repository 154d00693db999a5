//! `tpu`: simulate the Monte Carlo studies or analyze a two-phase CSV with
//! the update-estimator menu.
//!
//! Exit codes: 0 success, 2 configuration or schema error, 3 study abort,
//! 4 estimation failure.

mod analyze;
mod simulate;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_ABORT: u8 = 3;
pub const EXIT_ESTIMATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "tpu",
    version,
    about = "Two-phase update estimation: efficiency-improved regression with \
             expensive covariates observed on a subsample"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reproduce the Monte Carlo study tables.
    Simulate(simulate::SimulateArgs),
    /// Run the estimator menu on a two-phase CSV file.
    Analyze(analyze::AnalyzeArgs),
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn abort(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_ABORT,
            message: message.into(),
        }
    }

    pub fn estimation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_ESTIMATION,
            message: message.into(),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TPU_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| CliError::config(format!("TPU_THREADS must be a positive integer, got `{raw}`")))?;
    if threads == 0 {
        return Err(CliError::config("TPU_THREADS must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::config(format!("cannot configure thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Analyze(args) => analyze::run(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
