//! Controller synthesis for actuators with a continuous torque input and a
//! discrete gear-mode input.
//!
//! The pipeline: [`dp::value_iteration`] solves the constrained optimal
//! control problem on a grid, [`fit::distill`] compresses the tabular policy
//! into a switched PD law, [`stability`] checks that law with per-mode energy
//! functions, and [`sim::simulate`] runs any policy in closed loop.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below are what the command-line front end uses.

pub mod dp;
pub mod fit;
pub mod model;
pub mod scalar;
pub mod sim;
pub mod stability;

pub use scalar::Scalar;

pub type ActuatorParamsF64 = model::ActuatorParams<f64>;
pub type StateF64 = model::State<f64>;
pub type ControlInputF64 = model::ControlInput<f64>;
pub type CostWeightsF64 = model::CostWeights<f64>;
pub type GridSpecF64 = dp::GridSpec<f64>;
pub type TerminationSpecF64 = dp::TerminationSpec<f64>;
pub type SolutionF64 = dp::Solution<f64>;
pub type LawF64 = fit::PiecewiseLinearLaw<f64>;
pub type TrajectoryF64 = sim::Trajectory<f64>;
pub type EnergyParamsF64 = stability::EnergyParams<f64>;

pub type ActuatorParamsF32 = model::ActuatorParams<f32>;
pub type StateF32 = model::State<f32>;
pub type SolutionF32 = dp::Solution<f32>;
pub type LawF32 = fit::PiecewiseLinearLaw<f32>;
pub type TrajectoryF32 = sim::Trajectory<f32>;
