//! Configuration, experiment orchestration and report emission for
//! `riesz-lab`.

pub mod config;
pub mod rules;
pub mod run;

pub use config::{preset, Experiment, ExperimentConfig};
pub use run::{run_experiment, Outcome, RunError, Status};
