//! Command-line harness: dataset ingestion, run configuration, experiment
//! orchestration, and metrics logging.

pub mod arch;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod runlog;
pub mod suites;
pub mod sweep;

pub use config::{ConfigArgs, DatasetSpec, OptimizerSpec, OracleSpec, TrainConfig};
pub use error::{CliError, Result};
