//! Stochastic simulation of nucleation with polymer growth and fragmentation.
//!
//! The crate provides the model definition, fragmentation kernels, an exact
//! event-driven simulator, the post-nucleation branching approximation and
//! the statistical tools used to compare simulated observables with their
//! asymptotic predictions.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod branching;
pub mod experiment;
pub mod fragmentation;
pub mod model;
pub mod seeds;
pub mod simulator;
pub mod state;
pub mod sumtree;

pub use branching::{BranchingParams, BranchingRecord, SurvivalEstimate};
pub use experiment::{ExperimentConfig, Sweep, ValidationRecord};
pub use fragmentation::{Composition, FragmentationError, FragmentationSpec};
pub use model::{DerivedScales, ModelError, ModelParams, ScalingFunction};
pub use simulator::{
    run, InitialCondition, ObserverSet, RunConfig, SimulationError, SimulationMode, Simulator, StopRule,
    TrajectoryRecord,
};
pub use state::{SystemState, Transition, TransitionError};
