//! Experiment runner for the sivnode simulator: JSON configs in, CSV/JSON
//! plot data and a run manifest out.

pub mod config;
pub mod experiments;
pub mod runner;

pub use config::{ConfigError, ExperimentConfig};
pub use experiments::{catalog, Artifact, ExperimentSpec, Outputs, RunError};
pub use runner::{list_experiments, run, validate_bytes, validate_file, CliError, Overrides, RunManifest};
