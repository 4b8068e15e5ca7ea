use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use twaplan::engine::{initialize, run_iteration};
use twaplan::geometry::{
    capsule_clearance, min_relative_distance, solve_spring_slab, tangent_energy, SlabOptions, SlabScenario,
    SpringSlabProblem,
};
use twaplan::minimizers::{
    collision_minimizer, max_velocity_minimizer, min_velocity_minimizer, vo_collision_minimizer, vo_wall_minimizer,
    wall_minimizer, MinimizerOptions,
};
use twaplan::planner::{
    build_global_graph, plan_global, run_local_planner, EpochOutcome, LocalPlanConfig, PlanError,
};
use twaplan::scenarios_io::{export_csv, gen_conf1, gen_conf2, parse_csv, ScenarioFile};
use twaplan::{AgentSpec, Capsule, CostMode, InitMode, ScenarioSpec, Segment, SolverConfig, Vec2, Weight};

fn vec2(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
}

fn stiffness() -> impl Strategy<Value = f64> {
    (-2.0f64..2.0).prop_map(|e| 10f64.powf(e))
}

fn capsule() -> impl Strategy<Value = Capsule> {
    (vec2(1.5), vec2(1.5), 0.05f64..1.0, any::<bool>())
        .prop_map(|(a, b, r, point)| Capsule::new(Segment::new(a, if point { a } else { b }), r))
}

fn slab_problem() -> impl Strategy<Value = SpringSlabProblem> {
    (vec2(3.0), vec2(3.0), stiffness(), stiffness(), capsule())
        .prop_map(|(n, n_bar, rho, rho_bar, capsule)| SpringSlabProblem { n, n_bar, rho, rho_bar, capsule })
}

/// Two or three agents with non-overlapping starts and goals.
fn small_scenario() -> impl Strategy<Value = ScenarioSpec> {
    (2usize..=3, 1usize..=3, proptest::collection::vec((vec2(3.0), vec2(3.0)), 3), 0.2f64..0.5)
        .prop_map(|(p, eta, ends, r)| ScenarioSpec {
            eta,
            cost_mode: CostMode::Energy,
            agents: (0..p).map(|i| AgentSpec::new(i, ends[i].0, ends[i].1, r)).collect(),
            walls: vec![],
        })
        .prop_filter("starts and goals must not overlap", |sc| sc.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn slab_output_is_feasible_and_fixes_feasible_anchors(p in slab_problem(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = solve_spring_slab(&p, &SlabOptions::default(), &mut rng).unwrap();
        prop_assert!(capsule_clearance(&Segment::new(s.x, s.x_bar), &p.capsule) >= -1e-9);
        if capsule_clearance(&Segment::new(p.n, p.n_bar), &p.capsule) >= 0.0 {
            prop_assert_eq!(s.scenario, SlabScenario::Untouched);
            prop_assert_eq!((s.x, s.x_bar, s.energy), (p.n, p.n_bar, 0.0));
        }
    }

    #[test]
    fn tangent_derivatives_match_finite_differences(p in slab_problem(), theta in 0.0f64..std::f64::consts::TAU) {
        let axis = p.capsule.seg.b - p.capsule.seg.a;
        // Skip the two angles where the contact switches end caps.
        prop_assume!(axis.norm() < 1e-12 || (axis.dot(Vec2::from_angle(theta)) / axis.norm()).abs() > 1e-3);
        let h = 1e-5;
        let (lo, mid, hi) = (tangent_energy(theta - h, &p), tangent_energy(theta, &p), tangent_energy(theta + h, &p));
        let de = (hi.e - lo.e) / (2.0 * h);
        let d2e = (hi.de - lo.de) / (2.0 * h);
        prop_assert!((de - mid.de).abs() <= 1e-5 * mid.de.abs().max(1.0), "{} vs {}", de, mid.de);
        prop_assert!((d2e - mid.d2e).abs() <= 1e-5 * mid.d2e.abs().max(1.0), "{} vs {}", d2e, mid.d2e);
    }

    #[test]
    fn slab_is_rigid_motion_equivariant(p in slab_problem(), angle in -3.0f64..3.0, shift in vec2(5.0)) {
        let f = |v: Vec2| v.rotate(angle) + shift;
        let q = SpringSlabProblem {
            n: f(p.n),
            n_bar: f(p.n_bar),
            capsule: Capsule::new(Segment::new(f(p.capsule.seg.a), f(p.capsule.seg.b)), p.capsule.radius),
            ..p
        };
        let opts = SlabOptions::default();
        let s = solve_spring_slab(&p, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let t = solve_spring_slab(&q, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert!((s.energy - t.energy).abs() <= 1e-7 * s.energy.max(1.0));
        // Distinct minima can tie in energy, so positions are compared only for
        // clearly unique optima.
        if s.scenario == t.scenario {
            let gap = (f(s.x) - t.x).norm().max((f(s.x_bar) - t.x_bar).norm());
            prop_assert!(gap <= 1e-5 || (s.energy - t.energy).abs() <= 1e-9, "gap {}", gap);
        }
    }

    #[test]
    fn zero_weight_means_untouched_and_outputs_are_feasible(
        n in proptest::array::uniform4(vec2(2.0)),
        rho in proptest::array::uniform4(stiffness()),
        r in 0.1f64..1.0,
        r2 in 0.1f64..1.0,
        wall in capsule(),
        cap in 0.1f64..3.0,
        seed in any::<u64>(),
    ) {
        let opts = MinimizerOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, w) = collision_minimizer(n, rho, r, r2, &opts, &mut rng).unwrap();
        prop_assert!(w != Weight::Infinite);
        if w == Weight::Zero { prop_assert_eq!(x, n); }
        prop_assert!(min_relative_distance(x[2] - x[0], x[3] - x[1]) >= r + r2 - 1e-9);

        let (x, w) = wall_minimizer(n[0], n[1], rho[0], rho[1], r, wall.seg, &opts, &mut rng).unwrap();
        prop_assert!(w != Weight::Infinite);
        if w == Weight::Zero { prop_assert_eq!(x, [n[0], n[1]]); }
        prop_assert!(capsule_clearance(&Segment::new(x[0], x[1]), &Capsule::new(wall.seg, r)) >= -1e-9);

        let (x, w) = max_velocity_minimizer(n[0], n[1], rho[0], rho[1], cap, &opts);
        if w == Weight::Zero { prop_assert_eq!(x, [n[0], n[1]]); }
        prop_assert!((x[0] - x[1]).norm() <= cap + 1e-9);
        let (x, w) = min_velocity_minimizer(n[0], n[1], rho[0], rho[1], cap, &opts, &mut rng);
        if w == Weight::Zero { prop_assert_eq!(x, [n[0], n[1]]); }
        prop_assert!((x[0] - x[1]).norm() >= cap - 1e-9);
    }

    #[test]
    fn velocity_obstacle_outputs_are_feasible(
        n in proptest::array::uniform4(vec2(2.0)),
        rho in stiffness(),
        r in 0.1f64..0.5,
        wall in capsule(),
    ) {
        // Starts must themselves be clear for the constraint to be satisfiable.
        prop_assume!((n[2] - n[0]).norm() > 2.0 * r);
        prop_assume!(capsule_clearance(&Segment::point(n[0]), &Capsule::new(wall.seg, r)) > 0.0);
        let opts = MinimizerOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, _) = vo_collision_minimizer(n[1], n[3], rho, rho, n[0], n[2], r, r, &opts, &mut rng).unwrap();
        let d = min_relative_distance(n[2] - n[0], x[1] - x[0]);
        prop_assert!(d >= 2.0 * r - 1e-9, "distance {:e} short by {:e}", d, 2.0 * r - d);
        let (x, _) = vo_wall_minimizer(n[1], rho, n[0], r, wall.seg, &opts, &mut rng).unwrap();
        let c = capsule_clearance(&Segment::new(n[0], x), &Capsule::new(wall.seg, r));
        prop_assert!(c >= -1e-9, "clearance {:e}", c);
    }

    #[test]
    fn collision_swap_symmetry(
        n in proptest::array::uniform4(vec2(2.0)),
        rho in proptest::array::uniform4(stiffness()),
        r in 0.1f64..1.0,
        r2 in 0.1f64..1.0,
    ) {
        let opts = MinimizerOptions::default();
        let (x, _) = collision_minimizer(n, rho, r, r2, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (y, _) = collision_minimizer(
            [n[2], n[3], n[0], n[1]],
            [rho[2], rho[3], rho[0], rho[1]],
            r2,
            r,
            &opts,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        prop_assert_eq!(x, [y[2], y[3], y[0], y[1]]);
    }

    #[test]
    fn scenario_and_trajectory_round_trips(sc in small_scenario(), seed in 0u64..1000) {
        let file = ScenarioFile::new(sc);
        let text = file.to_toml().unwrap();
        let back = ScenarioFile::parse(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.to_toml().unwrap(), text);

        let conf2 = gen_conf2(4, Vec2::new(-3.0, -3.0), Vec2::new(3.0, 3.0), 0.4, 3, seed).unwrap();
        prop_assert!(conf2.validate().is_ok());
        let traj = twaplan::TrajectorySet::straight(&conf2);
        let csv = export_csv(&traj);
        prop_assert_eq!(export_csv(&parse_csv(&csv).unwrap()), csv);
    }

    #[test]
    fn graph_counts_match_closed_forms(p in 1usize..6, eta in 1usize..5, walls in 0usize..3) {
        let sc = ScenarioSpec {
            eta,
            cost_mode: CostMode::Energy,
            agents: (0..p)
                .map(|i| AgentSpec::new(i, Vec2::new(0.0, 3.0 * i as f64), Vec2::new(5.0, 3.0 * i as f64), 0.5))
                .collect(),
            walls: (0..walls)
                .map(|k| Segment::new(Vec2::new(-9.0, k as f64), Vec2::new(-8.0, k as f64)))
                .collect(),
        };
        let g = build_global_graph(&sc).unwrap();
        let pairs = p * (p - 1) / 2;
        prop_assert_eq!(g.graph.equality.len(), p * (eta + 1));
        prop_assert_eq!(g.graph.minimizers.len(), eta * pairs + p * eta + p * eta * walls);
        prop_assert_eq!(g.graph.edge_count(), 4 * eta * pairs + 2 * p * eta + 2 * p * eta * walls);
        prop_assert_eq!(g.graph.equality.iter().filter(|e| e.fixed.is_some()).count(), 2 * p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn engine_state_invariants(sc in small_scenario(), seed in 0u64..100) {
        let cfg = SolverConfig { rng_seed: seed, ..SolverConfig::for_problem(sc.eta, sc.agents.len()) };
        let mut gg = build_global_graph(&sc).unwrap();
        initialize(&mut gg.graph, InitMode::RandomBox { seed }, sc.bounds());
        gg.graph.seed(seed);
        let pinned: Vec<(usize, Vec2)> = gg.graph.equality.iter().enumerate()
            .filter_map(|(j, e)| e.fixed.map(|f| (j, f)))
            .collect();
        for it in 0..40 {
            let before = gg.graph.z();
            let stats = run_iteration(&mut gg.graph, &cfg, it).unwrap();
            let expect_rho = if it < 20 { cfg.warmup_rho0.unwrap() } else { cfg.rho0 };
            prop_assert_eq!(stats.rho0, expect_rho);
            prop_assert!(stats.max_residual >= 0.0 && stats.max_disagreement >= 0.0);
            for &(j, f) in &pinned {
                prop_assert_eq!(gg.graph.equality[j].z, f);
            }
            for m in &gg.graph.minimizers {
                for e in &m.edges {
                    prop_assert!(e.fwd != Weight::Infinite);
                    // m = x + u and n = z - u with the same `u`, so the
                    // previous consensus is recoverable from the messages.
                    let z_prev = e.n + (e.m - e.x);
                    prop_assert!((z_prev - before[e.var]).norm() <= 1e-9 * before[e.var].norm().max(1.0));
                }
            }
            // Weighted-mean property at every free node.
            for node in gg.graph.equality.iter().filter(|e| e.fixed.is_none()) {
                let incoming: Vec<(f64, Vec2)> = node.edges.iter().map(|&(b, slot)| {
                    let e = &gg.graph.minimizers[b].edges[slot];
                    (if e.fwd == Weight::Standard { 1.0 } else { 0.0 }, e.m)
                }).collect();
                let total: f64 = incoming.iter().map(|w| w.0).sum();
                let mut grad = Vec2::ZERO;
                for &(w, m) in &incoming {
                    grad += (node.z - m) * if total > 0.0 { w } else { 1.0 };
                }
                let scale = incoming.iter().map(|(_, m)| m.norm()).fold(1.0, f64::max);
                prop_assert!(grad.norm() <= 1e-9 * scale * incoming.len() as f64, "grad {}", grad);
            }
        }
    }

    #[test]
    fn planner_output_is_pinned_and_converged_means_feasible(sc in small_scenario()) {
        let cfg = SolverConfig { max_iters: 3000, ..SolverConfig::for_problem(sc.eta, sc.agents.len()) };
        let plan = match plan_global(&sc, &cfg, InitMode::AtStart) {
            Ok(plan) => {
                prop_assert!(plan.feasibility.is_feasible(), "{:?}", plan.feasibility);
                plan
            }
            Err(PlanError::NonConverged(plan)) => *plan,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for (path, a) in plan.trajectories.paths.iter().zip(&sc.agents) {
            prop_assert_eq!(path[0], a.start);
            prop_assert_eq!(path[sc.eta], a.goal);
        }
    }

    #[test]
    fn local_planner_epochs_are_safe(sc in small_scenario(), wall_y in -1.0f64..1.0) {
        let mut sc = sc;
        let wall = Segment::new(Vec2::new(-0.5, wall_y), Vec2::new(0.5, wall_y));
        prop_assume!(sc.agents.iter().all(|a| {
            let c = Capsule::new(wall, a.radius);
            !c.contains(a.start) && !c.contains(a.goal)
                && capsule_clearance(&Segment::point(a.start), &c) > 0.0
                && capsule_clearance(&Segment::point(a.goal), &c) > 0.0
        }));
        sc.walls.push(wall);
        let cfg = LocalPlanConfig { max_epochs: 40, ..Default::default() };
        let solver = SolverConfig { max_iters: 2000, ..SolverConfig::default() };
        let run = match run_local_planner(&sc, &cfg, &solver) {
            Ok(run) => run,
            Err(PlanError::EpochCapExceeded(run)) => *run,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for ep in run.epochs.iter().filter(|ep| ep.plan.outcome != EpochOutcome::Hold) {
            for i in 0..sc.agents.len() {
                let ai = &sc.agents[i];
                let c = Capsule::new(wall, ai.radius);
                prop_assert!(capsule_clearance(&Segment::new(ep.start[i], ep.end[i]), &c) >= -solver.feas_tol);
                for j in i + 1..sc.agents.len() {
                    let need = ai.radius + sc.agents[j].radius;
                    let d = min_relative_distance(ep.start[j] - ep.start[i], ep.end[j] - ep.end[i]);
                    prop_assert!(d >= need - solver.feas_tol, "epoch pair ({}, {}): {} < {}", i, j, d, need);
                }
            }
        }
    }
}

#[test]
fn stats_traces_are_bitwise_repeatable() {
    let sc = gen_conf1(6, 1.0, 3).unwrap();
    let cfg = SolverConfig { rng_seed: 5, ..SolverConfig::for_problem(3, 6) };
    let run = || plan_global(&sc, &cfg, InitMode::RandomBox { seed: 5 }).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trajectories, b.trajectories);
}

#[test]
fn objective_is_invariant_under_relabeling() {
    let agents = [
        AgentSpec::new(0, Vec2::new(-2.0, 0.1), Vec2::new(2.0, -0.2), 0.4),
        AgentSpec::new(1, Vec2::new(2.1, 0.3), Vec2::new(-2.0, 0.0), 0.5),
        AgentSpec::new(2, Vec2::new(0.2, -2.0), Vec2::new(-0.1, 2.2), 0.3),
    ];
    let solve = |order: &[usize]| {
        let sc = ScenarioSpec {
            eta: 4,
            cost_mode: CostMode::Energy,
            agents: order.iter().map(|&i| agents[i].clone()).collect(),
            walls: vec![],
        };
        plan_global(&sc, &SolverConfig::for_problem(4, 3), InitMode::AtStart).unwrap().energy
    };
    let base = solve(&[0, 1, 2]);
    for order in [[2, 0, 1], [1, 2, 0], [2, 1, 0]] {
        let e = solve(&order);
        assert!((e - base).abs() <= 1e-4 * base, "{order:?}: {e} vs {base}");
    }
}
