//! Configuration, orchestration and file formats around `dsm-core`.
//!
//! * [`config`]: strict TOML experiment specs.
//! * [`experiment`]: cells, trace files, summaries and config-driven checks.
//! * [`checks`]: checks that need no config.
//! * [`trace_io`]: CSV and JSONL trace files.
//! * [`exec`]: a rayon executor for the workers of a round.

pub mod checks;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod trace_io;

pub use config::ExperimentSpec;
pub use error::HarnessError;
pub use experiment::{check_experiment, run_experiment, CheckReport, ExperimentReport, RunOptions};
