//! Multi-agent trajectory planning with the three-weight message-passing
//! variant of ADMM.
//!
//! [`engine`] runs the message passing over a bipartite graph of equality
//! and minimizer nodes. [`minimizers`] holds the proximal operators for
//! collisions, walls and costs, built on the capsule geometry in
//! [`geometry`]. [`planner`] assembles global and receding-horizon problems.

pub mod engine;
pub mod geometry;
pub mod minimizers;
pub mod planner;
pub mod scenarios_io;

pub use engine::{FactorGraph, InitMode, SolverConfig, Weight, WarmupGain};
pub use geometry::{Capsule, Segment, Vec2};
pub use planner::{AgentSpec, CostMode, ScenarioSpec, TrajectorySet};
