//! Metrics, experiment configuration and the command-line runner.

pub mod config;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;

pub use config::{Baseline, ExperimentConfig};
pub use experiment::{run_comparison, run_experiment, write_artifacts, write_comparison, ExperimentOutput, ExperimentReport};
