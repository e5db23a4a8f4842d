//! Library side of the `bioauth-lab` command-line tool.

pub mod commands;
pub mod config;
pub mod enrollment;
pub mod error;

pub use commands::{execute, Output};
pub use config::{Cli, Command, GlobalOpts, OutputFormat, RunConfig};
pub use error::CliError;

/// Resolves the config and runs the command. Writing `Output::files` is
/// left to the caller.
pub fn run(cli: &Cli) -> Result<Output, CliError> {
    let cfg = RunConfig::from_opts(&cli.opts)?;
    execute(&cfg, &cli.command)
}
