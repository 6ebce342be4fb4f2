//! Experiment runner: configuration parsing, command pipelines and artifact output.

pub mod config;
pub mod run;

pub use config::{parse_args, Command, ConfigError, RunConfig};
pub use run::{run_experiment, Outcome, RunError};
