//! Experiment driver: single fusions, adaptive searches, grid sweeps and a
//! toy-world server.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 backend or
//! output failure, 3 search finished without acceptance.

pub mod args;
pub mod commands;
pub mod config;
pub mod engine;
pub mod error;
pub mod sweep;
pub mod trace;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use commands::{cmd_fuse, cmd_search, cmd_serve, cmd_sweep, Outcome};
pub use config::{BackendSpec, RunConfig};
pub use error::CliError;
pub use trace::RunTrace;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_UNACCEPTED: u8 = 3;

fn layered(common: &args::CommonArgs, overrides: serde_json::Value) -> Result<RunConfig, CliError> {
    let file = common
        .config
        .as_deref()
        .map(config::load_config_file)
        .transpose()?;
    RunConfig::layered(file, overrides)
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Fuse(a) => cmd_fuse(&layered(&a.common, a.overrides())?),
        Command::Search(a) => cmd_search(&layered(&a.common, a.overrides())?),
        Command::Sweep(a) => cmd_sweep(&layered(&a.common, a.common.overrides())?, &a),
        Command::Serve(a) => cmd_serve(&a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Unaccepted) => EXIT_UNACCEPTED,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
