//! Experiment harness around `rapl_core`: configuration, artifact formats,
//! the pipeline stages and the `rapl-lab` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod parallel;

pub use config::ExperimentConfig;
pub use error::{LabError, LabResult};
pub use experiment::Lab;
