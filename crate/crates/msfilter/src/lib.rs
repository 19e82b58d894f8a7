//! Experiment harness for multiscale particle filters: synthetic data,
//! filter runs scored against oracles, kernel comparisons and persisted
//! records.

pub mod compare;
pub mod config;
pub mod data;
pub mod error;
pub mod output;
pub mod run;

pub use compare::{compare_kernels, Basis, Comparison, ComparisonRow};
pub use config::{ExperimentConfig, OracleChoice, Overrides};
pub use data::{generate_synthetic_data, SyntheticData};
pub use error::HarnessError;
pub use run::{load_record, rerun_record, run_experiment, RunRecord};
