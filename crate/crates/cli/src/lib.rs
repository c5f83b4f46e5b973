//! `supcon` command-line driver: synthetic data, pretraining, linear
//! evaluation with sweeps, ablations and self-verification.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.

pub mod commands;
pub mod config;

use std::ffi::OsString;

use clap::Parser;
use thiserror::Error;

use supcon_core::Error as CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config line {line}: {detail}")]
    Config { line: usize, detail: String },

    #[error("{0} verification suite(s) failed")]
    VerifyFailed(usize),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => EXIT_VALIDATION,
            CliError::VerifyFailed(_) => EXIT_RUNTIME,
            CliError::Core(e) => match e {
                CoreError::Validation(_)
                | CoreError::InvalidArgument(_)
                | CoreError::UnknownTransform(_)
                | CoreError::MagnitudeOutOfRange { .. }
                | CoreError::PolicyFormat { .. }
                | CoreError::MissingParam(_) => EXIT_VALIDATION,
                _ => EXIT_RUNTIME,
            },
        }
    }
}

/// Parse `args` (program name first) and run the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match commands::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match commands::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
