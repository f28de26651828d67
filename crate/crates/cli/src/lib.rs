//! Experiment orchestration for mask post-processing with a learned shape
//! prior: configuration, dataset handling, the end-to-end pipeline,
//! aggregated reports and box plots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod plot;
pub mod report;

pub use config::{ExperimentConfig, TimingMode};
pub use error::{CliError, Result};
pub use pipeline::{run_experiment, ExperimentOutcome};
pub use report::ComparisonReport;
