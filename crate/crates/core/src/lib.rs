//! Grid-based target tracking that fuses autonomous range sensors with
//! free-form human sketches, while learning how reliable each human is.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod human;
pub mod learning;
pub mod motion;
pub mod sensors;
pub mod sim;
pub mod tracker;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{build_grid, polygon_mask, project_to_ground, Bounds, CameraPose, Frame, Intrinsics, ParticleGrid, ParticleMask, Polygon};
pub use human::{marginal_sketch_likelihood, OperatorId, ReliabilityState, SketchObservation};
pub use learning::{update_reliability, LearningOptions, LearningRecord, VarianceMode};
pub use motion::{build_kernel, predict, TransitionKernel, VelocityMode, VelocityState};
pub use sensors::{range_likelihood, RangeObservation, SensorId};
pub use tracker::{assign_weights, fuse, joint_step, update, Belief, FusionWeights, ObservationBundle, SourceId, StepOutput, Tracker};
