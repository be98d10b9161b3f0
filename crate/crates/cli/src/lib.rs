//! Config parsing and experiment drivers behind the `turnpike` binary.

pub mod config;
pub mod experiments;

pub use config::{ConfigError, Experiment, ExperimentConfig, ExperimentKind};
pub use experiments::{emit_builtin_configs, run, RunError, RunOutcome};
