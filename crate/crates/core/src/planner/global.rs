use crate::engine::{
    initialize, run_until_converged_with, FactorGraph, InitMode, IterationStats, SolveError, SolverConfig,
};
use crate::minimizers::MinimizerKind;

use super::{trajectory_energy, verify_feasible, CostMode, FeasibilityReport, PlanError, ScenarioSpec, TrajectorySet};

/// Factor graph of a global planning problem with the variable index
/// `vars[agent][break_point]`.
#[derive(Debug, Clone)]
pub struct GlobalGraph {
    pub graph: FactorGraph,
    pub vars: Vec<Vec<usize>>,
}

impl GlobalGraph {
    pub fn trajectories(&self) -> TrajectorySet {
        self.trajectories_from(&self.graph.z())
    }

    pub fn trajectories_from(&self, z: &[crate::geometry::Vec2]) -> TrajectorySet {
        TrajectorySet { paths: self.vars.iter().map(|row| row.iter().map(|&v| z[v]).collect()).collect() }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalPlan {
    pub trajectories: TrajectorySet,
    pub converged: bool,
    pub iterations: usize,
    /// Kinetic energy of the returned trajectories, whatever the cost mode.
    pub energy: f64,
    pub feasibility: FeasibilityReport,
    pub trace: Vec<IterationStats>,
}

/// One equality node per agent and break-point (the end points pinned), one
/// collision node per agent pair and segment, cost nodes per agent and
/// segment as the cost mode dictates, and one wall node per agent, wall and
/// segment.
pub fn build_global_graph(scenario: &ScenarioSpec) -> Result<GlobalGraph, PlanError> {
    scenario.validate()?;
    let eta = scenario.eta;
    let agents = &scenario.agents;
    let mut graph = FactorGraph::new();
    let vars: Vec<Vec<usize>> = agents
        .iter()
        .map(|a| {
            (0..=eta)
                .map(|s| {
                    let v = match s {
                        0 => graph.add_variable(a.start, true),
                        s if s == eta => graph.add_variable(a.goal, true),
                        _ => graph.add_variable(a.start, false),
                    };
                    graph.set_home(v, a.start);
                    v
                })
                .collect()
        })
        .collect();

    for s in 0..eta {
        for i in 0..agents.len() {
            for j in i + 1..agents.len() {
                graph.add_minimizer(
                    MinimizerKind::Collision { r: agents[i].radius, r_other: agents[j].radius },
                    &[vars[i][s], vars[i][s + 1], vars[j][s], vars[j][s + 1]],
                )?;
            }
        }
    }
    for (i, a) in agents.iter().enumerate() {
        for s in 0..eta {
            let ends = [vars[i][s], vars[i][s + 1]];
            match scenario.cost_mode {
                CostMode::Energy => {
                    graph.add_minimizer(MinimizerKind::Energy { c: a.coeff(s) }, &ends)?;
                }
                CostMode::Feasible => {}
                CostMode::VelocityCap => {
                    if let Some(c) = a.vmax {
                        graph.add_minimizer(MinimizerKind::MaxVelocity { c }, &ends)?;
                    }
                    if let Some(c) = a.vmin {
                        graph.add_minimizer(MinimizerKind::MinVelocity { c }, &ends)?;
                    }
                }
            }
        }
    }
    for (i, a) in agents.iter().enumerate() {
        for wall in &scenario.walls {
            for s in 0..eta {
                graph.add_minimizer(
                    MinimizerKind::Wall { r: a.radius, wall: *wall },
                    &[vars[i][s], vars[i][s + 1]],
                )?;
            }
        }
    }
    Ok(GlobalGraph { graph, vars })
}

pub fn plan_global(scenario: &ScenarioSpec, config: &SolverConfig, init: InitMode) -> Result<GlobalPlan, PlanError> {
    plan_global_with(scenario, config, init, |_, _| {})
}

/// Runs the global planner, calling `observer` after every iteration.
pub fn plan_global_with<F>(
    scenario: &ScenarioSpec,
    config: &SolverConfig,
    init: InitMode,
    observer: F,
) -> Result<GlobalPlan, PlanError>
where
    F: FnMut(&IterationStats, &FactorGraph),
{
    let mut gg = build_global_graph(scenario)?;
    initialize(&mut gg.graph, init, scenario.bounds());
    let (solution, converged) = match run_until_converged_with(&mut gg.graph, config, observer) {
        Ok(s) => (s, true),
        Err(SolveError::NonConverged(best)) => (*best, false),
        Err(SolveError::Engine(e)) => return Err(e.into()),
    };
    let trajectories = gg.trajectories_from(&solution.z);
    let plan = GlobalPlan {
        energy: trajectory_energy(&trajectories, scenario),
        feasibility: verify_feasible(&trajectories, scenario, config.feas_tol),
        trajectories,
        converged,
        iterations: solution.iterations,
        trace: solution.trace,
    };
    if converged {
        Ok(plan)
    } else {
        Err(PlanError::NonConverged(Box::new(plan)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Segment, Vec2};
    use crate::planner::AgentSpec;

    fn line_of_agents(p: usize, eta: usize, walls: usize) -> ScenarioSpec {
        ScenarioSpec {
            eta,
            cost_mode: CostMode::Energy,
            agents: (0..p)
                .map(|i| AgentSpec::new(i, Vec2::new(0.0, 3.0 * i as f64), Vec2::new(5.0, 3.0 * i as f64), 0.5))
                .collect(),
            walls: (0..walls)
                .map(|k| Segment::new(Vec2::new(2.0, -10.0 - k as f64), Vec2::new(2.0, -11.0 - k as f64)))
                .collect(),
        }
    }

    #[test]
    fn graph_counts() {
        let g = build_global_graph(&line_of_agents(3, 2, 0)).unwrap();
        assert_eq!(g.graph.minimizers.len(), 12);
        assert_eq!(g.graph.equality.len(), 9);
        assert_eq!(g.graph.equality.iter().filter(|e| e.fixed.is_some()).count(), 6);

        let g = build_global_graph(&line_of_agents(1, 1, 0)).unwrap();
        assert_eq!(g.graph.minimizers.len(), 1);
        assert_eq!(g.graph.equality.iter().filter(|e| e.fixed.is_some()).count(), 2);

        let g = build_global_graph(&line_of_agents(2, 3, 1)).unwrap();
        let count = |f: fn(&MinimizerKind) -> bool| g.graph.minimizers.iter().filter(|m| f(&m.kind)).count();
        assert_eq!(count(|k| matches!(k, MinimizerKind::Collision { .. })), 3);
        assert_eq!(count(|k| matches!(k, MinimizerKind::Energy { .. })), 6);
        assert_eq!(count(|k| matches!(k, MinimizerKind::Wall { .. })), 6);
    }

    #[test]
    fn single_agent_goes_straight() {
        let sc = line_of_agents(1, 4, 0);
        let plan = plan_global(&sc, &SolverConfig::for_problem(4, 1), InitMode::AtStart).unwrap();
        for (s, x) in plan.trajectories.paths[0].iter().enumerate() {
            assert!((*x - Vec2::new(5.0 * s as f64 / 4.0, 0.0)).norm() < 1e-4, "{s}: {x}");
        }
        assert!((plan.energy - 25.0 / 4.0).abs() < 1e-4);
    }
}
