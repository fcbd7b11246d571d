//! Experiment runner built on `pltanh-core`.

pub mod commands;
pub mod config;
pub mod datasets;
mod error;
pub mod results;

pub use config::{DatasetName, ExperimentConfig};
pub use error::CliError;
pub use results::ResultRow;
