use std::time::Instant;

use crate::engine::{initialize, run_until_converged, FactorGraph, InitMode, SolveError, SolverConfig};
use crate::geometry::{capsule_clearance, min_relative_distance, Capsule, Segment, Vec2};
use crate::minimizers::MinimizerKind;

use super::{PlanError, ScenarioSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalPlanConfig {
    /// Collision-free horizon in seconds.
    pub tau: f64,
    /// Fraction of the horizon executed before replanning.
    pub epoch_fraction: f64,
    /// Preferred speed toward the goal.
    pub v_cap: f64,
    /// Per-agent cost coefficients `C_i`; `None` takes each agent's energy
    /// coefficient.
    pub coeffs: Option<Vec<f64>>,
    pub goal_tol: f64,
    pub max_epochs: usize,
}

impl Default for LocalPlanConfig {
    fn default() -> Self {
        LocalPlanConfig { tau: 1.0, epoch_fraction: 0.5, v_cap: 1.0, coeffs: None, goal_tol: 1e-3, max_epochs: 500 }
    }
}

impl LocalPlanConfig {
    /// `C_i = 1 + 0.001 i`, which breaks the symmetry of antipodal swaps.
    pub fn staggered(p: usize) -> Vec<f64> {
        (0..p).map(|i| 1.0 + 0.001 * i as f64).collect()
    }

    fn coeff(&self, scenario: &ScenarioSpec, i: usize) -> f64 {
        self.coeffs.as_ref().map_or(scenario.agents[i].energy_coeff, |c| c[i])
    }
}

/// Velocity toward the goal at speed `v_cap`, slowed so that an unobstructed
/// agent lands on its goal exactly at the end of an epoch.
pub fn reference_velocity(position: Vec2, goal: Vec2, config: &LocalPlanConfig) -> Vec2 {
    let d = goal - position;
    let dist = d.norm();
    if dist == 0.0 {
        return Vec2::ZERO;
    }
    d / (config.epoch_fraction * config.tau).max(dist / config.v_cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochOutcome {
    Converged,
    /// Solver hit its cap; its best iterate was feasible.
    BestFeasible,
    /// No feasible iterate; every agent holds position.
    Hold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    /// Positions at the end of the horizon.
    pub targets: Vec<Vec2>,
    pub x_ref: Vec<Vec2>,
    pub iterations: usize,
    pub outcome: EpochOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Positions at the start of the epoch.
    pub start: Vec<Vec2>,
    pub plan: EpochPlan,
    /// Positions after executing the epoch.
    pub end: Vec<Vec2>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalRun {
    pub epochs: Vec<EpochRecord>,
    pub arrived: bool,
    pub final_positions: Vec<Vec2>,
}

/// Largest constraint violation of the straight paths `start -> target`.
fn path_violation(start: &[Vec2], target: &[Vec2], scenario: &ScenarioSpec) -> f64 {
    let agents = &scenario.agents;
    let mut worst: f64 = 0.0;
    for i in 0..start.len() {
        for j in i + 1..start.len() {
            let d = min_relative_distance(start[j] - start[i], target[j] - target[i]);
            worst = worst.max(agents[i].radius + agents[j].radius - d);
        }
        for wall in &scenario.walls {
            let c = capsule_clearance(&Segment::new(start[i], target[i]), &Capsule::new(*wall, agents[i].radius));
            worst = worst.max(-c);
        }
    }
    worst
}

/// Solves one velocity-obstacle problem from `positions`. `warm` seeds the
/// consensus (typically the previous epoch's targets shifted forward).
pub fn plan_local_epoch(
    positions: &[Vec2],
    scenario: &ScenarioSpec,
    config: &LocalPlanConfig,
    solver: &SolverConfig,
    warm: Option<&[Vec2]>,
) -> Result<EpochPlan, PlanError> {
    let agents = &scenario.agents;
    let p = agents.len();
    let tau2 = config.tau * config.tau;
    let x_ref: Vec<Vec2> = (0..p)
        .map(|i| positions[i] + reference_velocity(positions[i], agents[i].goal, config) * config.tau)
        .collect();

    let mut graph = FactorGraph::new();
    let vars: Vec<usize> = (0..p)
        .map(|i| graph.add_variable(warm.map_or(positions[i], |w| w[i]), false))
        .collect();
    for i in 0..p {
        for j in i + 1..p {
            graph.add_minimizer(
                MinimizerKind::VoCollision {
                    r: agents[i].radius,
                    r_other: agents[j].radius,
                    start: positions[i],
                    start_other: positions[j],
                },
                &[vars[i], vars[j]],
            )?;
        }
    }
    for i in 0..p {
        for wall in &scenario.walls {
            graph.add_minimizer(
                MinimizerKind::VoWall { r: agents[i].radius, wall: *wall, start: positions[i] },
                &[vars[i]],
            )?;
        }
        graph.add_minimizer(
            MinimizerKind::VoCost { c: config.coeff(scenario, i) / tau2, x_ref: x_ref[i] },
            &[vars[i]],
        )?;
    }
    let (lo, hi) = scenario.bounds();
    initialize(&mut graph, InitMode::AtStart, (lo, hi));

    let (targets, iterations, outcome) = match run_until_converged(&mut graph, solver) {
        Ok(s) => (s.z, s.iterations, EpochOutcome::Converged),
        Err(SolveError::NonConverged(best)) => {
            if path_violation(positions, &best.z, scenario) <= solver.feas_tol {
                (best.z, best.iterations, EpochOutcome::BestFeasible)
            } else {
                (positions.to_vec(), best.iterations, EpochOutcome::Hold)
            }
        }
        Err(SolveError::Engine(e)) => return Err(e.into()),
    };
    Ok(EpochPlan { targets, x_ref, iterations, outcome })
}

/// Replans every `epoch_fraction * tau` seconds until all agents are within
/// `goal_tol` of their goals.
pub fn run_local_planner(
    scenario: &ScenarioSpec,
    config: &LocalPlanConfig,
    solver: &SolverConfig,
) -> Result<LocalRun, PlanError> {
    scenario.validate()?;
    let a = config.epoch_fraction;
    let mut positions: Vec<Vec2> = scenario.agents.iter().map(|ag| ag.start).collect();
    let mut warm: Option<Vec<Vec2>> = None;
    let mut epochs = Vec::new();
    let arrived = |pos: &[Vec2]| {
        pos.iter().zip(&scenario.agents).all(|(x, ag)| (*x - ag.goal).norm() <= config.goal_tol)
    };
    while !arrived(&positions) {
        if epochs.len() >= config.max_epochs {
            return Err(PlanError::EpochCapExceeded(Box::new(LocalRun {
                epochs,
                arrived: false,
                final_positions: positions,
            })));
        }
        let clock = Instant::now();
        let plan = plan_local_epoch(&positions, scenario, config, solver, warm.as_deref())?;
        let end: Vec<Vec2> = positions.iter().zip(&plan.targets).map(|(x, t)| x.lerp(*t, a)).collect();
        // Keep the same velocity as the initial guess for the next epoch.
        warm = Some(end.iter().zip(&plan.targets).zip(&positions).map(|((e, t), x)| *e + (*t - *x)).collect());
        log::debug!("epoch {}: {:?} after {} iterations", epochs.len(), plan.outcome, plan.iterations);
        epochs.push(EpochRecord {
            start: std::mem::replace(&mut positions, end.clone()),
            plan,
            end,
            seconds: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(LocalRun { epochs, arrived: true, final_positions: positions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{AgentSpec, CostMode};

    #[test]
    fn lone_agent_arrival_count() {
        let sc = ScenarioSpec {
            eta: 1,
            cost_mode: CostMode::Energy,
            agents: vec![AgentSpec::new(0, Vec2::ZERO, Vec2::new(3.2, 0.0), 0.5)],
            walls: vec![],
        };
        let cfg = LocalPlanConfig::default();
        let run = run_local_planner(&sc, &cfg, &SolverConfig::default()).unwrap();
        // 3.2 m at 1 m/s in 0.5 s epochs.
        assert_eq!(run.epochs.len(), 7);
        assert!((run.final_positions[0] - Vec2::new(3.2, 0.0)).norm() <= cfg.goal_tol);
    }

    #[test]
    fn reference_velocity_is_capped() {
        let cfg = LocalPlanConfig::default();
        let v = reference_velocity(Vec2::ZERO, Vec2::new(10.0, 0.0), &cfg);
        assert!((v - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        let v = reference_velocity(Vec2::ZERO, Vec2::new(0.2, 0.0), &cfg);
        assert!((v - Vec2::new(0.4, 0.0)).norm() < 1e-12);
    }
}
