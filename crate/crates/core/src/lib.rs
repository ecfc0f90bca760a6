//! Learned localization maps for serial ensemble Kalman filters, with a
//! Lorenz-96 twin-experiment harness.
//!
//! The pipeline: generate a nature run ([`model`]), observe it
//! ([`observations`]), archive correlations from a large reference filter
//! ([`stats`]), regress small-ensemble correlations onto them
//! ([`training`]), and verify the resulting [`localization`] schemes in a
//! cycling serial EnKF ([`filters`], [`cycling`], [`diagnostics`]).
//! [`harness`] wires the stages together behind a CLI.

pub mod cycling;
pub mod diagnostics;
pub mod error;
pub mod filters;
pub mod harness;
pub mod io;
pub mod localization;
pub mod model;
pub mod numerics;
pub mod observations;
pub mod rng;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use localization::{gaspari_cohn, LocalizationScheme, MapTensor};
pub use model::{nature_run, ModelConfig, StateVector, Trajectory};
pub use observations::{ObsKind, ObservationOperator};
pub use stats::{CrossCorrelation, Ensemble};
