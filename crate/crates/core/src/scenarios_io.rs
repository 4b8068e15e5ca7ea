//! Scenario generators, the TOML scenario file, and trajectory exporters.
//!
//! Scenario files look like
//!
//! ```toml
//! schema_version = 1
//!
//! [scenario]
//! eta = 4
//! cost_mode = "energy"
//!
//! [[scenario.agents]]
//! id = 0
//! start = [1.0, 0.0]
//! goal = [-1.0, 0.0]
//! radius = 0.24
//!
//! [solver]        # optional, any subset of the fields
//! max_iters = 20000
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SolverConfig;
use crate::geometry::Vec2;
use crate::planner::{AgentSpec, CostMode, PlanError, ScenarioSpec, TrajectorySet};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("invalid agent count {p}")]
    InvalidP { p: usize },
    #[error("could not place {p} agents after {attempts} attempts")]
    PlacementFailed { p: usize, attempts: usize },
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Scenario(#[from] PlanError),
}

/// How the CONF1 disc radius is derived from `p` and `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conf1RadiusRule {
    /// `r = 5/4 R sin(pi / 2p)`. Neighbouring discs never overlap.
    #[default]
    Spaced,
    /// `r = 5/4 R sin(pi / (2(p - 4)))`, as usually quoted. Neighbours overlap
    /// at the start for p = 6, 8 and 10, so those scenarios fail validation.
    Printed,
}

pub fn conf1_radius(p: usize, big_r: f64, rule: Conf1RadiusRule) -> f64 {
    match rule {
        Conf1RadiusRule::Spaced => 1.25 * big_r * (PI / (2.0 * p as f64)).sin(),
        Conf1RadiusRule::Printed => conf1_printed_radius(p, big_r),
    }
}

pub fn conf1_printed_radius(p: usize, big_r: f64) -> f64 {
    1.25 * big_r * (PI / (2.0 * (p as f64 - 4.0))).sin()
}

/// `p` agents evenly spaced on a circle of radius `big_r`, agent 0 at angle 0
/// and counter-clockwise, each swapping with its antipode.
pub fn gen_conf1(p: usize, big_r: f64, eta: usize) -> Result<ScenarioSpec, IoError> {
    gen_conf1_with(p, big_r, eta, Conf1RadiusRule::default())
}

pub fn gen_conf1_with(p: usize, big_r: f64, eta: usize, rule: Conf1RadiusRule) -> Result<ScenarioSpec, IoError> {
    let min_p = match rule {
        Conf1RadiusRule::Spaced => 2,
        Conf1RadiusRule::Printed => 6,
    };
    if p % 2 == 1 || p < min_p {
        return Err(IoError::InvalidP { p });
    }
    let r = conf1_radius(p, big_r, rule);
    let agents = (0..p)
        .map(|i| {
            let start = Vec2::from_angle(2.0 * PI * i as f64 / p as f64) * big_r;
            AgentSpec::new(i, start, -start, r)
        })
        .collect();
    Ok(ScenarioSpec { eta, cost_mode: CostMode::Energy, agents, walls: Vec::new() })
}

/// Draws attempts per agent before giving up.
const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Starts and goals uniform in the box `lo..hi`, rejection-sampled so that no
/// two starts (or goals) overlap.
pub fn gen_conf2(p: usize, lo: Vec2, hi: Vec2, radius: f64, eta: usize, seed: u64) -> Result<ScenarioSpec, IoError> {
    if p == 0 {
        return Err(IoError::InvalidP { p });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut place = |taken: &[Vec2]| -> Result<Vec2, IoError> {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let q = Vec2::new(rng.gen_range(lo.x..=hi.x), rng.gen_range(lo.y..=hi.y));
            if taken.iter().all(|t| (q - *t).norm() >= 2.0 * radius) {
                return Ok(q);
            }
        }
        Err(IoError::PlacementFailed { p, attempts: PLACEMENT_ATTEMPTS })
    };
    let mut starts = Vec::with_capacity(p);
    let mut goals = Vec::with_capacity(p);
    for _ in 0..p {
        let s = place(&starts)?;
        starts.push(s);
        let g = place(&goals)?;
        goals.push(g);
    }
    let agents = (0..p).map(|i| AgentSpec::new(i, starts[i], goals[i], radius)).collect();
    Ok(ScenarioSpec { eta, cost_mode: CostMode::Energy, agents, walls: Vec::new() })
}

/// Solver settings a scenario file may pin.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feas_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub res_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admm_mode: Option<bool>,
}

impl SolverOverrides {
    pub fn apply(&self, cfg: &mut SolverConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(rho0, step_alpha, max_iters, feas_tol, res_tol, rng_seed, admm_mode);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub scenario: ScenarioSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverOverrides>,
}

impl ScenarioFile {
    pub fn new(scenario: ScenarioSpec) -> Self {
        ScenarioFile { schema_version: SCHEMA_VERSION, scenario, solver: None }
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let f: ScenarioFile = toml::from_str(text)?;
        if f.schema_version != SCHEMA_VERSION {
            return Err(IoError::SchemaVersion(f.schema_version));
        }
        f.scenario.validate()?;
        Ok(f)
    }

    pub fn to_toml(&self) -> Result<String, IoError> {
        Ok(toml::to_string(self)?)
    }
}

/// Rounds to the nine significant digits the CSV carries.
fn csv_value(v: f64) -> f64 {
    format!("{v:.8e}").parse().unwrap_or(v)
}

/// One row per agent and break-point under the header `agent,s,x,y`.
pub fn export_csv(traj: &TrajectorySet) -> String {
    let mut out = String::from("agent,s,x,y\n");
    for (i, path) in traj.paths.iter().enumerate() {
        for (s, x) in path.iter().enumerate() {
            let _ = writeln!(out, "{i},{s},{},{}", csv_value(x.x), csv_value(x.y));
        }
    }
    out
}

/// Inverse of [`export_csv`]. Rows may come in any order but every agent must
/// have the same break-points `0..=eta`.
pub fn parse_csv(text: &str) -> Result<TrajectorySet, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "agent,s,x,y" => {}
        _ => return Err(IoError::Csv { line: 1, msg: "expected header agent,s,x,y".into() }),
    }
    let mut rows: Vec<(usize, usize, Vec2)> = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| IoError::Csv { line: k + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", f.len())));
        }
        let agent = f[0].parse().map_err(|e| err(format!("agent: {e}")))?;
        let s = f[1].parse().map_err(|e| err(format!("s: {e}")))?;
        let x = f[2].parse().map_err(|e| err(format!("x: {e}")))?;
        let y = f[3].parse().map_err(|e| err(format!("y: {e}")))?;
        rows.push((agent, s, Vec2::new(x, y)));
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let mut paths: Vec<Vec<Vec2>> = Vec::new();
    for (agent, s, x) in rows {
        if agent == paths.len() && s == 0 {
            paths.push(Vec::new());
        }
        match paths.get_mut(agent) {
            Some(path) if path.len() == s => path.push(x),
            _ => return Err(IoError::Csv { line: 0, msg: format!("missing or duplicate row before agent {agent}, s {s}") }),
        }
    }
    if paths.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(IoError::Csv { line: 0, msg: "agents have different break-point counts".into() });
    }
    Ok(TrajectorySet { paths })
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// SVG 1.1 drawing in world units (y up): walls, each agent's break-point
/// polyline, and faint discs at `samples_per_segment` points per segment.
pub fn export_svg(traj: &TrajectorySet, scenario: &ScenarioSpec, samples_per_segment: usize) -> String {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: Vec2, r: f64| {
        lo = Vec2::new(lo.x.min(p.x - r), lo.y.min(p.y - r));
        hi = Vec2::new(hi.x.max(p.x + r), hi.y.max(p.y + r));
    };
    for (path, agent) in traj.paths.iter().zip(&scenario.agents) {
        for x in path {
            grow(*x, agent.radius);
        }
    }
    for w in &scenario.walls {
        grow(w.a, 0.0);
        grow(w.b, 0.0);
    }
    if !lo.is_finite() {
        lo = Vec2::new(-1.0, -1.0);
        hi = Vec2::new(1.0, 1.0);
    }
    let margin = 0.05 * (hi - lo).inf_norm().max(1e-3);
    let (lo, hi) = (lo - Vec2::new(margin, margin), hi + Vec2::new(margin, margin));
    let size = hi - lo;
    let stroke = size.inf_norm() / 400.0;
    let px = 800.0;
    let height = px * size.y / size.x;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{px:.0}" height="{height:.0}" viewBox="{:.6} {:.6} {:.6} {:.6}">"#,
        lo.x, -hi.y, size.x, size.y
    );
    let _ = writeln!(out, r#"<g transform="scale(1,-1)" stroke-width="{stroke:.6}">"#);
    for w in &scenario.walls {
        let _ = writeln!(
            out,
            r#"<line x1="{:.6}" y1="{:.6}" x2="{:.6}" y2="{:.6}" stroke="black"/>"#,
            w.a.x, w.a.y, w.b.x, w.b.y
        );
    }
    let samples = samples_per_segment.max(1);
    for (i, (path, agent)) in traj.paths.iter().zip(&scenario.agents).enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<g id="agent{i}" stroke="{colour}" fill="{colour}">"#);
        for w in path.windows(2) {
            for k in 0..samples {
                let c = w[0].lerp(w[1], k as f64 / samples as f64);
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.6}" cy="{:.6}" r="{:.6}" fill-opacity="0.08" stroke-opacity="0.3"/>"#,
                    c.x, c.y, agent.radius
                );
            }
        }
        if let Some(end) = path.last() {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.6}" cy="{:.6}" r="{:.6}" fill-opacity="0.25"/>"#,
                end.x, end.y, agent.radius
            );
        }
        let points: Vec<String> = path.iter().map(|x| format!("{:.6},{:.6}", x.x, x.y)).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none"/>"#, points.join(" "));
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</g>\n</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Segment;

    #[test]
    fn conf1_examples() {
        assert!((conf1_printed_radius(8, 1.0) - 0.478353).abs() < 5e-6);
        let sc = gen_conf1(8, 1.0, 4).unwrap();
        assert_eq!(sc.agents[0].start, Vec2::new(1.0, 0.0));
        assert_eq!(sc.agents[0].goal, Vec2::new(-1.0, 0.0));
        assert!((sc.agents[2].start - Vec2::new(0.0, 1.0)).norm() < 1e-15);
        sc.validate().unwrap();
        assert!(matches!(gen_conf1(7, 1.0, 4), Err(IoError::InvalidP { p: 7 })));
        assert!(matches!(gen_conf1_with(4, 1.0, 4, Conf1RadiusRule::Printed), Err(IoError::InvalidP { .. })));
    }

    #[test]
    fn printed_radius_overlaps_neighbours() {
        for p in [6, 8, 10] {
            let sc = gen_conf1_with(p, 1.0, 4, Conf1RadiusRule::Printed).unwrap();
            assert!(sc.validate().is_err(), "p = {p}");
        }
    }

    #[test]
    fn conf2_is_seeded_and_spaced() {
        let a = gen_conf2(10, Vec2::new(-3.0, -3.0), Vec2::new(3.0, 3.0), 0.4, 4, 5).unwrap();
        let b = gen_conf2(10, Vec2::new(-3.0, -3.0), Vec2::new(3.0, 3.0), 0.4, 4, 5).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        let one = gen_conf2(1, Vec2::ZERO, Vec2::new(1.0, 1.0), 0.1, 1, 0).unwrap();
        let s = one.agents[0].start;
        assert!((0.0..=1.0).contains(&s.x) && (0.0..=1.0).contains(&s.y));
        assert!(matches!(
            gen_conf2(50, Vec2::ZERO, Vec2::new(1.0, 1.0), 0.4, 1, 0),
            Err(IoError::PlacementFailed { .. })
        ));
    }

    #[test]
    fn csv_rows_and_round_trip() {
        let t = TrajectorySet { paths: vec![vec![Vec2::new(0.1, 1.0 / 3.0), Vec2::new(-2.0e-7, 12345.678901234)]] };
        let text = export_csv(&t);
        assert_eq!(text.lines().count(), 3);
        let back = parse_csv(&text).unwrap();
        assert!((back.paths[0][0].y - 0.333333333).abs() < 1e-15);
        assert_eq!(export_csv(&back), text);
    }

    #[test]
    fn scenario_file_round_trip() {
        let mut sc = gen_conf1(6, 2.0, 3).unwrap();
        sc.walls.push(Segment::new(Vec2::new(0.0, 5.0), Vec2::new(1.0, 5.0)));
        sc.agents[1].segment_coeffs = Some(vec![1.0, 2.0, 3.0]);
        let mut f = ScenarioFile::new(sc);
        f.solver = Some(SolverOverrides { max_iters: Some(7), ..Default::default() });
        let text = f.to_toml().unwrap();
        let back = ScenarioFile::parse(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn scenario_file_rejects_other_versions() {
        let text = ScenarioFile::new(gen_conf1(6, 1.0, 2).unwrap()).to_toml().unwrap();
        let text = text.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(ScenarioFile::parse(&text), Err(IoError::SchemaVersion(2))));
    }
}
