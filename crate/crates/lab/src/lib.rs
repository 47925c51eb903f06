//! File formats, pipelines and the command line around `mialab-core`.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod formats;
pub mod manifest;
pub mod oracle;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use pipeline::{run_blackbox, run_sweep, run_whitebox, RunOutcome, Stage};
