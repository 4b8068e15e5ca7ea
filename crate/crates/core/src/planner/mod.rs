//! Scenario model, global and local planners, and trajectory verification.

mod global;
mod local;

pub use global::{build_global_graph, plan_global, plan_global_with, GlobalGraph, GlobalPlan};
pub use local::{
    plan_local_epoch, reference_velocity, run_local_planner, EpochOutcome, EpochPlan, EpochRecord,
    LocalPlanConfig, LocalRun,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineError;
use crate::geometry::{capsule_clearance, min_relative_distance, Capsule, Segment, Vec2};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: usize,
    pub start: Vec2,
    pub goal: Vec2,
    pub radius: f64,
    #[serde(default = "one")]
    pub energy_coeff: f64,
    /// Per-segment energy coefficients; overrides `energy_coeff` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_coeffs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vmax: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vmin: Option<f64>,
}

impl AgentSpec {
    pub fn new(id: usize, start: Vec2, goal: Vec2, radius: f64) -> Self {
        AgentSpec {
            id,
            start,
            goal,
            radius,
            energy_coeff: 1.0,
            segment_coeffs: None,
            vmax: None,
            vmin: None,
        }
    }

    pub fn coeff(&self, s: usize) -> f64 {
        self.segment_coeffs.as_ref().map_or(self.energy_coeff, |c| c[s])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    /// Minimise kinetic energy.
    Energy,
    /// Collision avoidance only.
    Feasible,
    /// Per-segment speed limits from `vmax` / `vmin`.
    VelocityCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub eta: usize,
    pub cost_mode: CostMode,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub walls: Vec<Segment>,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("global planner did not converge after {} iterations", .0.iterations)]
    NonConverged(Box<GlobalPlan>),
    #[error("local planner hit the cap of {} epochs", .0.epochs.len())]
    EpochCapExceeded(Box<LocalRun>),
}

impl ScenarioSpec {
    pub fn p(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::InvalidScenario(m));
        if self.eta < 1 {
            return bad("eta must be at least 1".into());
        }
        for a in &self.agents {
            if !(a.radius > 0.0) {
                return bad(format!("agent {}: radius must be positive", a.id));
            }
            if !a.start.is_finite() || !a.goal.is_finite() {
                return bad(format!("agent {}: non-finite position", a.id));
            }
            if let Some(c) = &a.segment_coeffs {
                if c.len() != self.eta {
                    return bad(format!("agent {}: {} segment coefficients for eta {}", a.id, c.len(), self.eta));
                }
            }
            if self.cost_mode == CostMode::VelocityCap && a.vmax.is_none() && a.vmin.is_none() {
                return bad(format!("agent {}: velocity-cap mode needs vmax or vmin", a.id));
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                let need = a.radius + b.radius;
                if (a.start - b.start).norm() < need {
                    return bad(format!("agents {} and {} overlap at the start", a.id, b.id));
                }
                if (a.goal - b.goal).norm() < need {
                    return bad(format!("agents {} and {} overlap at the goal", a.id, b.id));
                }
            }
        }
        Ok(())
    }

    /// Axis-aligned box around all starts and goals.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for a in &self.agents {
            for p in [a.start, a.goal] {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        (lo, hi)
    }
}

/// Piecewise-linear paths, `paths[i][s]` for break-points `s = 0..=eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub paths: Vec<Vec<Vec2>>,
}

impl TrajectorySet {
    pub fn p(&self) -> usize {
        self.paths.len()
    }

    pub fn eta(&self) -> usize {
        self.paths.first().map_or(0, |p| p.len().saturating_sub(1))
    }

    /// Straight lines from start to goal.
    pub fn straight(scenario: &ScenarioSpec) -> Self {
        let eta = scenario.eta;
        TrajectorySet {
            paths: scenario
                .agents
                .iter()
                .map(|a| (0..=eta).map(|s| a.start.lerp(a.goal, s as f64 / eta as f64)).collect())
                .collect(),
        }
    }
}

/// Kinetic-energy objective `sum_{i,s} C_{i,s} |x_i(s+1) - x_i(s)|^2`.
pub fn trajectory_energy(traj: &TrajectorySet, scenario: &ScenarioSpec) -> f64 {
    let mut total = 0.0;
    for (path, agent) in traj.paths.iter().zip(&scenario.agents) {
        for (s, w) in path.windows(2).enumerate() {
            total += agent.coeff(s) * (w[1] - w[0]).norm_sq();
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Agents { i: usize, j: usize },
    Wall { agent: usize, wall: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub segment: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// Largest violation over all pairs, walls and segments (zero if none).
    pub worst: f64,
    /// Every violation larger than the tolerance used.
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every pair of agents and every agent-wall combination on every
/// segment, assuming constant velocity between break-points.
pub fn verify_feasible(traj: &TrajectorySet, scenario: &ScenarioSpec, tol: f64) -> FeasibilityReport {
    let mut worst: f64 = 0.0;
    let mut violations = Vec::new();
    let mut record = |kind, segment, amount: f64| {
        worst = worst.max(amount);
        if amount > tol {
            violations.push(Violation { kind, segment, amount });
        }
    };
    let eta = traj.eta();
    let agents = &scenario.agents;
    for s in 0..eta {
        for i in 0..traj.p() {
            for j in i + 1..traj.p() {
                let d0 = traj.paths[j][s] - traj.paths[i][s];
                let d1 = traj.paths[j][s + 1] - traj.paths[i][s + 1];
                let gap = agents[i].radius + agents[j].radius - min_relative_distance(d0, d1);
                record(ViolationKind::Agents { i, j }, s, gap.max(0.0));
            }
            let seg = Segment::new(traj.paths[i][s], traj.paths[i][s + 1]);
            for (k, wall) in scenario.walls.iter().enumerate() {
                let c = capsule_clearance(&seg, &Capsule::new(*wall, agents[i].radius));
                record(ViolationKind::Wall { agent: i, wall: k }, s, (-c).max(0.0));
            }
        }
    }
    FeasibilityReport { worst, violations }
}
