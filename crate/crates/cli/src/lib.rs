//! Pipeline stages behind the `astrolsm` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
