//! Library surface of the pipeline driver. The binary is a thin clap
//! wrapper over [`commands`]; everything else is exported so integration
//! tests and downstream tooling can drive runs in-process.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod synth;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
