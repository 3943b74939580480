//! Library side of the `qttbs` command: config parsing, commands and benchmark suites.

pub mod bench;
pub mod config;
pub mod error;
pub mod run;

pub use error::CliError;
