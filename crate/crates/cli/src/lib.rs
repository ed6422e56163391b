//! File formats and subcommands around `eapcr-core`: series CSV, checkpoint
//! and report JSON, run configuration, and the train / eval / sweep /
//! ablate / predict / synth commands behind the `time-eapcr` binary.

pub mod commands;
pub mod config;
mod error;
pub mod json;
pub mod table;

pub use error::{CliError, Result};
