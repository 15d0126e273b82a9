//! Command-line frontend: configuration loading and the stage subcommands.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_equilibrium, cmd_induce, cmd_partition, cmd_pressure, cmd_stability, cmd_tower};
pub use config::ExperimentConfig;
pub use error::CliError;
