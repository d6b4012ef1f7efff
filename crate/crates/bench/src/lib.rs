//! Experiment driver: four timed phases around one index, with counters bracketing only the
//! run phase, plus report emission, charts and the preset matrix.

pub mod alloc;
pub mod chart;
pub mod config;
pub mod emit;
pub mod matrix;
pub mod report;
pub mod runner;

pub use config::{ExperimentArgs, ExperimentConfig, IndexKind, InstructionSource, UsageError};
pub use report::RunReport;
pub use runner::{run_experiment, RunError};
