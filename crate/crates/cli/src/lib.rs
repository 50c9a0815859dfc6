//! Batch front end: configuration, command dispatch, kernel caching and output files.

pub mod commands;
pub mod config;
mod plot;

pub use commands::{run, CliError, Command, Flags, Outcome};
pub use config::{parse_config, parse_config_str, ConfigError, RunSpec};
