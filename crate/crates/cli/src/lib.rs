//! Batch front end for the `ergosde` library: TOML run configuration,
//! subcommands and report files.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use commands::{run, Command, Outcome};
pub use config::{Format, RunConfig};
pub use error::{CliError, Result};
