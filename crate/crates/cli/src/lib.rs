//! Batch driver for the assouad-core experiments: TOML configuration,
//! subject and direction construction, and deterministic CSV/JSON output.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{resolve, run, CliError, Command, Overrides, PipelineSummary};
pub use config::{ConfigError, ExperimentConfig};
