//! Experiment driver behind the `metaldc` binary: configuration, the
//! subcommands and their CSV / JSON / SVG outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
