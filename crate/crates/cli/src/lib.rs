//! Experiment drivers behind the `wri` command: forward modelling of the
//! Gaussian-lens model, inversions averaged over sketch seeds, rank sweeps
//! and a quick self-check.

pub mod check;
pub mod config;
pub mod experiment;

pub use check::{run_check, CheckResult};
pub use config::ExperimentConfig;
pub use experiment::{run_forward, run_inversion, run_sweep, RunArtifacts, RunResult, Setup, SweepSummary};
