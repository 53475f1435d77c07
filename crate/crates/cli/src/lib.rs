//! Configuration loading and experiment orchestration for the `icrl` binary.

pub mod config;
pub mod run;

pub use config::{load_config, parse_config, read_config, Config, ConfigError};
pub use run::{csv_header, decompose, run, DecomposeReport, Summary};
