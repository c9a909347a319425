//! Command-line front end: trains fixtures, computes attribution maps, runs the
//! Sensitivity-n and perturbation evaluations and renders heatmaps.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

pub mod commands;
pub mod fixtures;
pub mod manifest;
pub mod render;

use std::ffi::OsString;

use clap::Parser;

pub use commands::{Cli, Command};
pub use manifest::RunManifest;

/// Parses `argv` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let args: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match commands::run_command(cli.command, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
