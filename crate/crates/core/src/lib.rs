//! Closed-loop simulation of circular shell drilling guided by a per-point
//! completion estimate.
//!
//! The drill follows a closed cubic spline through points on a circle. Each
//! point sinks at a speed proportional to its remaining work, the path is
//! refit every control period, and the loop stops once most points read
//! nearly done.

pub mod config;
pub mod controller;
pub mod exec;
pub mod field;
pub mod perception;
pub mod specimen;
pub mod spline;
pub mod trajectory;

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;

pub use config::{ConfigError, StopRule, Traversal, TraversalMode, TrialConfig};
pub use controller::{
    run_batch, run_trial, stop_condition, BatchSummary, Classification, CompletionSensor,
    MapSensor, TickStatus, TraceRecord, Trial, TrialError, TrialOutcome,
};
pub use exec::Execution;
pub use perception::{
    calibrate_sigma, mape, BoundingBox, CompletionMap, PerceptionError, ProgressBar,
    SensorNoise, SensorNoiseModel,
};
pub use specimen::{
    make_specimen, patch_detachable, DetachRule, DrillTool, ShellSpecimen, SpecimenConfig,
    SpecimenError,
};
pub use spline::{
    check_envelope, compute_knot_derivatives, fit_constrained, fit_natural, SplineError,
    SplinePath, SplineSegment,
};
pub use trajectory::{PathState, TrajectoryError, TrajectoryPoint};

/// Any error the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Specimen(#[from] SpecimenError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trial(#[from] TrialError),
}
