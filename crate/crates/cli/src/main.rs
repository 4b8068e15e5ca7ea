//! `twaplan` command-line front end.
//!
//! Exit codes: 0 on success, 1 on I/O, parse or solver errors, 2 when the
//! planner stops without a converged (or fully arrived) result.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, LevelFilter};

use twaplan::engine::IterationStats;
use twaplan::planner::{
    plan_global, plan_global_with, run_local_planner, verify_feasible, GlobalPlan, LocalPlanConfig, LocalRun,
    PlanError,
};
use twaplan::scenarios_io::{
    export_csv, export_svg, gen_conf1_with, gen_conf2, parse_csv, Conf1RadiusRule, ScenarioFile,
};
use twaplan::{CostMode, InitMode, ScenarioSpec, SolverConfig, TrajectorySet, Vec2};

#[derive(Parser)]
#[command(name = "twaplan", version, about = "Multi-agent trajectory planning with three-weight message passing")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario with the global planner.
    Plan(PlanArgs),
    /// Run the receding-horizon velocity-obstacle planner.
    Local(LocalArgs),
    /// Compare TWA and plain ADMM iteration counts on CONF1.
    Bench(BenchArgs),
    /// Write a benchmark scenario file.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Render a trajectory CSV as SVG.
    Export(ExportArgs),
}

#[derive(Args)]
struct SolverFlags {
    /// Seed for tie-breaking and random initialisation.
    #[arg(long)]
    seed: Option<u64>,
    /// Run plain ADMM (every weight standard).
    #[arg(long)]
    admm: bool,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rho0: Option<f64>,
    /// Feasibility and residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads for the engine (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl SolverFlags {
    fn apply(&self, cfg: &mut SolverConfig) {
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if self.admm {
            cfg.admm_mode = true;
        }
        if let Some(n) = self.max_iters {
            cfg.max_iters = n;
        }
        if let Some(r) = self.rho0 {
            cfg.rho0 = r;
        }
        if let Some(t) = self.tol {
            cfg.feas_tol = t;
            cfg.res_tol = t;
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Energy,
    Feasible,
    VelocityCap,
}

impl From<Mode> for CostMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Energy => CostMode::Energy,
            Mode::Feasible => CostMode::Feasible,
            Mode::VelocityCap => CostMode::VelocityCap,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    /// Interior break-points start at each agent's start position.
    Start,
    /// Interior break-points drawn uniformly from the scenario's bounding box.
    Random,
}

#[derive(Args)]
struct PlanArgs {
    scenario: PathBuf,
    /// Override the scenario's break-point count.
    #[arg(long)]
    eta: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum, default_value = "start")]
    init: Init,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Discs drawn per segment in the SVG.
    #[arg(long, default_value_t = 4)]
    samples: usize,
}

#[derive(Args)]
struct LocalArgs {
    scenario: PathBuf,
    /// Collision-free horizon in seconds.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Fraction of the horizon executed before replanning.
    #[arg(long, default_value_t = 0.5)]
    epoch_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    v_cap: f64,
    #[arg(long, default_value_t = 1e-3)]
    goal_tol: f64,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    /// Use cost coefficients `1 + 0.001 i` instead of the agents' own.
    #[arg(long)]
    staggered: bool,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Agent counts.
    #[arg(long, value_delimiter = ',', default_value = "4,6,8")]
    p: Vec<usize>,
    /// Break-point counts.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    eta: Vec<usize>,
    /// Number of seeds per cell, `0..seeds`.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Circle radius of the CONF1 instances.
    #[arg(long, default_value_t = 1.0)]
    big_r: f64,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum GenCommand {
    /// Antipodal swap on a circle.
    Conf1 {
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 1.0)]
        big_r: f64,
        #[arg(long, default_value_t = 4)]
        eta: usize,
        /// Use `5/4 R sin(pi / 2(p-4))` for the radius; overlaps for p <= 10.
        #[arg(long)]
        printed_radius: bool,
        /// Output file; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random starts and goals in the square `[-h, h]^2`.
    Conf2 {
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 4.0)]
        half_extent: f64,
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long, default_value_t = 4)]
        eta: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExportArgs {
    /// Trajectory CSV with columns `agent,s,x,y`.
    trajectory: PathBuf,
    /// Scenario the trajectory belongs to (radii and walls).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    svg: PathBuf,
    #[arg(long, default_value_t = 4)]
    samples: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        2 => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Plan(a) => with_threads(a.solver.threads, || cmd_plan(&a)),
        Command::Local(a) => with_threads(a.solver.threads, || cmd_local(&a)),
        Command::Bench(a) => with_threads(a.threads, || cmd_bench(&a)),
        Command::Gen(g) => cmd_gen(g),
        Command::Export(a) => cmd_export(&a),
    }
}

fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<u8> + Send) -> Result<u8> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(f),
        None => f(),
    }
}

fn read_scenario(path: &Path) -> Result<ScenarioFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ScenarioFile::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_plan(a: &PlanArgs) -> Result<u8> {
    let file = read_scenario(&a.scenario)?;
    let mut sc = file.scenario;
    if let Some(eta) = a.eta {
        sc.eta = eta;
    }
    if let Some(m) = a.mode {
        sc.cost_mode = m.into();
    }
    sc.validate()?;
    let mut cfg = SolverConfig::for_problem(sc.eta, sc.p());
    if let Some(o) = &file.solver {
        o.apply(&mut cfg);
    }
    a.solver.apply(&mut cfg);
    let init = match a.init {
        Init::Start => InitMode::AtStart,
        Init::Random => InitMode::RandomBox { seed: cfg.rng_seed },
    };

    let clock = Instant::now();
    let mut stats = String::from(
        "iter,rho0,max_residual,max_disagreement,active_constraints,max_violation,objective,elapsed_s\n",
    );
    let observer = |s: &IterationStats, _: &_| stats_row(&mut stats, s, clock.elapsed().as_secs_f64());
    let (plan, converged) = match plan_global_with(&sc, &cfg, init, observer) {
        Ok(plan) => (plan, true),
        Err(PlanError::NonConverged(plan)) => (*plan, false),
        Err(e) => return Err(e.into()),
    };

    create_dir(&a.out)?;
    write(&a.out.join("traj.csv"), &export_csv(&plan.trajectories))?;
    write(&a.out.join("traj.svg"), &export_svg(&plan.trajectories, &sc, a.samples))?;
    write(&a.out.join("stats.csv"), &stats)?;
    print!("{}", plan_summary(&plan, converged));
    Ok(if converged && plan.feasibility.is_feasible() { 0 } else { 2 })
}

fn stats_row(out: &mut String, s: &IterationStats, elapsed: f64) {
    let objective = s.objective.map_or(String::new(), |o| o.to_string());
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{:.6}",
        s.iter, s.rho0, s.max_residual, s.max_disagreement, s.active_constraints, s.max_violation, objective, elapsed
    );
}

fn plan_summary(plan: &GlobalPlan, converged: bool) -> String {
    let status = if converged { "converged" } else { "not converged" };
    format!(
        "{status} after {} iterations\nenergy {}\nworst violation {:e} ({} violations)\n",
        plan.iterations,
        plan.energy,
        plan.feasibility.worst,
        plan.feasibility.violations.len()
    )
}

fn cmd_local(a: &LocalArgs) -> Result<u8> {
    let file = read_scenario(&a.scenario)?;
    let sc = file.scenario;
    let config = LocalPlanConfig {
        tau: a.tau,
        epoch_fraction: a.epoch_fraction,
        v_cap: a.v_cap,
        coeffs: a.staggered.then(|| LocalPlanConfig::staggered(sc.p())),
        goal_tol: a.goal_tol,
        max_epochs: a.max_epochs,
    };
    if !(config.tau > 0.0) || !(config.epoch_fraction > 0.0 && config.epoch_fraction < 1.0) {
        bail!("need tau > 0 and 0 < epoch-fraction < 1");
    }
    let mut cfg = SolverConfig::default();
    if let Some(o) = &file.solver {
        o.apply(&mut cfg);
    }
    a.solver.apply(&mut cfg);

    let (run, arrived) = match run_local_planner(&sc, &config, &cfg) {
        Ok(run) => (run, true),
        Err(PlanError::EpochCapExceeded(run)) => (*run, false),
        Err(e) => return Err(e.into()),
    };

    create_dir(&a.out)?;
    write(&a.out.join("epochs.csv"), &epochs_csv(&run))?;
    let executed = executed_paths(&run, &sc);
    write(&a.out.join("traj.csv"), &export_csv(&executed))?;
    write(&a.out.join("traj.svg"), &export_svg(&executed, &sc, 1))?;
    let summary = local_summary(&run, &sc, arrived);
    write(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(if arrived { 0 } else { 2 })
}

fn epochs_csv(run: &LocalRun) -> String {
    let mut out =
        String::from("epoch,agent,start_x,start_y,end_x,end_y,target_x,target_y,outcome,iterations,seconds\n");
    for (k, ep) in run.epochs.iter().enumerate() {
        for i in 0..ep.start.len() {
            let _ = writeln!(
                out,
                "{k},{i},{},{},{},{},{},{},{:?},{},{:.6}",
                ep.start[i].x,
                ep.start[i].y,
                ep.end[i].x,
                ep.end[i].y,
                ep.plan.targets[i].x,
                ep.plan.targets[i].y,
                ep.plan.outcome,
                ep.plan.iterations,
                ep.seconds
            );
        }
    }
    out
}

/// Positions at every epoch boundary, one break-point per epoch.
fn executed_paths(run: &LocalRun, sc: &ScenarioSpec) -> TrajectorySet {
    let paths = (0..sc.p())
        .map(|i| std::iter::once(sc.agents[i].start).chain(run.epochs.iter().map(|ep| ep.end[i])).collect())
        .collect();
    TrajectorySet { paths }
}

fn local_summary(run: &LocalRun, sc: &ScenarioSpec, arrived: bool) -> String {
    let mut out = String::new();
    let status = if arrived { "all agents arrived" } else { "epoch cap reached" };
    let _ = writeln!(out, "{status} after {} epochs", run.epochs.len());
    let iterations: usize = run.epochs.iter().map(|e| e.plan.iterations).sum();
    let _ = writeln!(out, "solver iterations {iterations}");
    for (i, (x, agent)) in run.final_positions.iter().zip(&sc.agents).enumerate() {
        let _ = writeln!(out, "agent {i}: final {x}, distance to goal {:e}", (*x - agent.goal).norm());
    }
    out
}

fn cmd_bench(a: &BenchArgs) -> Result<u8> {
    let mut records =
        String::from("scenario,p,eta,mode,seed,converged,iterations,objective,feasible,seconds\n");
    let mut summary = String::from("p,eta,mode,runs,converged,median_iterations\n");
    let mut report = String::new();
    for &p in &a.p {
        for &eta in &a.eta {
            let sc = gen_conf1_with(p, a.big_r, eta, Conf1RadiusRule::Spaced)?;
            let mut medians = Vec::new();
            for (mode, admm) in [("TWA", false), ("ADMM", true)] {
                let mut iters = Vec::new();
                let mut converged = 0;
                for seed in 0..a.seeds {
                    let mut cfg = SolverConfig { rng_seed: seed, admm_mode: admm, ..SolverConfig::for_problem(eta, p) };
                    if let Some(n) = a.max_iters {
                        cfg.max_iters = n;
                    }
                    if let Some(r) = a.rho0 {
                        cfg.rho0 = r;
                    }
                    if let Some(t) = a.tol {
                        cfg.feas_tol = t;
                        cfg.res_tol = t;
                    }
                    let clock = Instant::now();
                    let result = plan_global(&sc, &cfg, InitMode::RandomBox { seed });
                    let seconds = clock.elapsed().as_secs_f64();
                    let (ok, n, objective, feasible) = match &result {
                        Ok(plan) => (true, plan.iterations, plan.energy.to_string(), plan.feasibility.is_feasible()),
                        Err(PlanError::NonConverged(plan)) => {
                            (false, plan.iterations, plan.energy.to_string(), plan.feasibility.is_feasible())
                        }
                        Err(e) => {
                            info!("p={p} eta={eta} {mode} seed {seed}: {e}");
                            (false, 0, String::new(), false)
                        }
                    };
                    converged += usize::from(ok);
                    iters.push(n as f64);
                    let _ = writeln!(
                        records,
                        "conf1-p{p},{p},{eta},{mode},{seed},{ok},{n},{objective},{feasible},{seconds:.6}"
                    );
                }
                let m = median(&mut iters);
                medians.push(m);
                let _ = writeln!(summary, "{p},{eta},{mode},{},{converged},{m}", a.seeds);
            }
            let _ = writeln!(
                report,
                "p={p} eta={eta}: median iterations TWA {} ADMM {} (ADMM/TWA {:.2})",
                medians[0],
                medians[1],
                medians[1] / medians[0]
            );
        }
    }
    create_dir(&a.out)?;
    write(&a.out.join("bench.csv"), &records)?;
    write(&a.out.join("summary.csv"), &summary)?;
    print!("{report}");
    Ok(0)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn cmd_gen(g: GenCommand) -> Result<u8> {
    let (sc, out) = match g {
        GenCommand::Conf1 { p, big_r, eta, printed_radius, out } => {
            let rule = if printed_radius { Conf1RadiusRule::Printed } else { Conf1RadiusRule::Spaced };
            (gen_conf1_with(p, big_r, eta, rule)?, out)
        }
        GenCommand::Conf2 { p, half_extent, radius, eta, seed, out } => {
            let h = half_extent;
            (gen_conf2(p, Vec2::new(-h, -h), Vec2::new(h, h), radius, eta, seed)?, out)
        }
    };
    let text = ScenarioFile::new(sc).to_toml()?;
    match out {
        Some(path) => write(&path, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_export(a: &ExportArgs) -> Result<u8> {
    let sc = read_scenario(&a.scenario)?.scenario;
    let text = fs::read_to_string(&a.trajectory).with_context(|| format!("reading {}", a.trajectory.display()))?;
    let traj = parse_csv(&text).with_context(|| format!("parsing {}", a.trajectory.display()))?;
    if traj.p() != sc.p() {
        bail!("trajectory has {} agents, scenario has {}", traj.p(), sc.p());
    }
    let report = verify_feasible(&traj, &sc, 1e-6);
    write(&a.svg, &export_svg(&traj, &sc, a.samples))?;
    println!("{} agents, worst violation {:e}", traj.p(), report.worst);
    Ok(0)
}
