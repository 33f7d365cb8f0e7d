//! Config-driven experiment runner.

pub mod config;
mod experiment;
pub mod report;
mod suite;

pub use config::{Analysis, DataConfig, ExperimentConfig, Method, SplitConfig, SuiteConfig, SuiteGrid};
pub use experiment::run_experiment;
pub use report::{MedianSummary, OutputFormat, ResultRecord, TableRow};
pub use suite::run_suite;
