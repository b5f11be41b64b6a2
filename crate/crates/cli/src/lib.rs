//! Experiment runner for `wdrank`: config parsing and the subcommand bodies.

pub mod config;
pub mod run;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, Profile};
