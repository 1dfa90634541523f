//! Experiment orchestration: configuration, subcommands, result files and
//! the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod records;

pub use acceptance::{reproducibility, verify_all, Verdict};
pub use config::ExperimentConfig;
pub use experiments::{Criterion, Experiment, Outcome};
pub use records::{read_csv, read_jsonl, Report, ResultRecord, Table};
