//! Interactive bathtub model of ride-sourcing traffic.
//!
//! Vehicles are tracked by remaining trip distance; the network speed
//! follows an average-density relation. The crate provides the simulator,
//! density-based admission control, ride-pooling optimization and the
//! `bathtub` command-line front end.

pub mod cli;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod output;
pub mod pooling;
pub mod scalar;
pub mod scenario;

pub use control::{ControlPolicy, Rule};
pub use dynamics::{
    run, run_until_drained, run_with, GridState, RunOptions, Simulation, StepOutcome,
};
pub use error::{Error, Result};
pub use metrics::{RunRecord, Summary};
pub use pooling::{dp_optimize, PoolingPolicy};
pub use scalar::Scalar;
pub use scenario::Scenario;

pub type Scenario64 = Scenario<f64>;
pub type Scenario32 = Scenario<f32>;
pub type RunRecord64 = RunRecord<f64>;
pub type RunRecord32 = RunRecord<f32>;
pub type GridState64 = GridState<f64>;
