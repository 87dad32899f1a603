//! Configured experiments and their output bundles.

pub mod config;
pub mod report;
pub mod run;

pub use config::ExperimentConfig;
pub use report::write_bundle;
pub use run::{run_detection_rate, run_trace, ExperimentResult, Mode};
