//! Twin-experiment orchestration: configuration, the persisted phases and
//! the CLI.

mod cli;
pub mod config;
pub mod phases;
pub mod study;

pub use cli::{cli_dispatch, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
pub use config::{ExperimentConfig, SchemeKind};
pub use phases::{run_nature_phase, run_training_phase, run_verification_phase, ResultRow, Run, RunManifest};
pub use study::{MapRequest, ObsSetup, Regressor, SetupData};
