//! Experiment orchestration for the longcl toolkit: config loading, grid
//! execution over (arm, order, seed) cells, and run-directory comparison.

pub mod compare;
pub mod config;
pub mod runner;

pub use compare::{compare_runs, render_csv, render_text, ArmRow};
pub use config::{ExperimentConfig, OrderSpec, RunMeta, StreamSpec};
pub use runner::{run_experiment, CellResult};
