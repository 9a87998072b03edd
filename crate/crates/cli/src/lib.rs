//! Config-driven experiment runner: one experiment per invocation, all
//! artifacts plus the resolved configuration written to one directory.

pub mod config;
pub mod run;
pub mod svg;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig, Kind};
pub use run::{run_experiment, RunError};
