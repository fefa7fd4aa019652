//! Configuration-driven runner for nonlocal epidemic simulations.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_equilibria, cmd_run, cmd_study, load_config, CliError, Format, StudyKind};
pub use config::{parse_config, ConfigError, RunConfig};
