//! Three-weight message passing over a bipartite graph of minimizer nodes and
//! equality nodes. Forcing every weight to the standard value gives plain ADMM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::minimizers::{MinimizerError, MinimizerKind, MinimizerOptions};

/// Certainty attached to a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weight {
    Zero,
    Standard,
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeState {
    pub x: Vec2,
    pub u: Vec2,
    pub n: Vec2,
    pub m: Vec2,
    pub fwd: Weight,
    pub rev: Weight,
    /// Equality node at the other end.
    pub var: usize,
}

impl EdgeState {
    fn new(var: usize) -> Self {
        EdgeState {
            x: Vec2::ZERO,
            u: Vec2::ZERO,
            n: Vec2::ZERO,
            m: Vec2::ZERO,
            fwd: Weight::Standard,
            rev: Weight::Standard,
            var,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualityNode {
    pub z: Vec2,
    pub fixed: Option<Vec2>,
    /// Value used by [`InitMode::AtStart`].
    pub home: Vec2,
    /// Incident edges as `(minimizer, slot)`.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct MinimizerNode {
    pub kind: MinimizerKind,
    /// Incident edges in the kind's argument order.
    pub edges: Vec<EdgeState>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    pub equality: Vec<EqualityNode>,
    pub minimizers: Vec<MinimizerNode>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("equality node {node}: infinite-weight messages disagree by {spread}")]
    ConflictingCertainty { node: usize, spread: f64 },
    #[error("minimizer {node}: {source}")]
    Minimizer { node: usize, source: MinimizerError },
    #[error("minimizer of arity {expected} given {got} variables")]
    Arity { expected: usize, got: usize },
    #[error("unknown variable {0}")]
    UnknownVariable(usize),
}

/// Which weight divides the step size in the running-sum update while the
/// warm-up weight is in effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmupGain {
    /// `step_alpha / rho0`, the post-warm-up weight.
    #[default]
    Nominal,
    /// `step_alpha / warmup_rho0`. Blows up for small warm-up weights.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rho0: f64,
    /// Standard weight during warm-up; `None` means the same as `rho0`.
    pub warmup_rho0: Option<f64>,
    pub warmup_iters: usize,
    pub warmup_gain: WarmupGain,
    pub step_alpha: f64,
    pub max_iters: usize,
    pub feas_tol: f64,
    pub res_tol: f64,
    pub rng_seed: u64,
    pub admm_mode: bool,
    pub infinity_surrogate: f64,
    pub zero_surrogate: f64,
    pub scan_points: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho0: 20.0,
            warmup_rho0: None,
            warmup_iters: 20,
            warmup_gain: WarmupGain::Nominal,
            step_alpha: 1.0,
            max_iters: 10_000,
            feas_tol: 1e-6,
            res_tol: 1e-6,
            rng_seed: 0,
            admm_mode: false,
            infinity_surrogate: 1e8,
            zero_surrogate: 1e-8,
            scan_points: 1000,
        }
    }
}

impl SolverConfig {
    /// Default configuration with the warm-up weight `eta * p * 1e-5`.
    pub fn for_problem(eta: usize, p: usize) -> Self {
        SolverConfig { warmup_rho0: Some(eta as f64 * p as f64 * 1e-5), ..Default::default() }
    }

    /// Settings as published: `rho0 = 1`, step size 0.1, warm-up weight
    /// `eta * p * 1e-5` that also scales the running-sum step.
    pub fn paper(eta: usize, p: usize) -> Self {
        SolverConfig {
            rho0: 1.0,
            step_alpha: 0.1,
            warmup_gain: WarmupGain::Literal,
            ..Self::for_problem(eta, p)
        }
    }

    fn gain_rho0(&self, iter: usize) -> f64 {
        match self.warmup_gain {
            WarmupGain::Nominal => self.rho0,
            WarmupGain::Literal => self.effective_rho0(iter),
        }
    }

    /// Standard weight in effect at iteration `iter`.
    pub fn effective_rho0(&self, iter: usize) -> f64 {
        match self.warmup_rho0 {
            Some(w) if iter < self.warmup_iters => w,
            _ => self.rho0,
        }
    }

    pub fn minimizer_options(&self) -> MinimizerOptions {
        MinimizerOptions {
            zero_surrogate: self.zero_surrogate,
            infinity_surrogate: self.infinity_surrogate,
            scan_points: self.scan_points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iter: usize,
    pub rho0: f64,
    /// `max_j |z_j^{k+1} - z_j^k|_inf`.
    pub max_residual: f64,
    /// `max_edge |x - z|_inf`.
    pub max_disagreement: f64,
    /// Hard-constraint minimizers that emitted a non-zero weight.
    pub active_constraints: usize,
    /// Largest hard-constraint violation at the new consensus.
    pub max_violation: f64,
    /// Sum of soft terms at the new consensus, if there are any.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    AtStart,
    RandomBox { seed: u64 },
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an equality node. Pinned nodes keep `value` forever.
    pub fn add_variable(&mut self, value: Vec2, pinned: bool) -> usize {
        self.equality.push(EqualityNode {
            z: value,
            fixed: pinned.then_some(value),
            home: value,
            edges: Vec::new(),
        });
        self.equality.len() - 1
    }

    pub fn add_minimizer(&mut self, kind: MinimizerKind, vars: &[usize]) -> Result<usize, EngineError> {
        if vars.len() != kind.arity() {
            return Err(EngineError::Arity { expected: kind.arity(), got: vars.len() });
        }
        if let Some(&bad) = vars.iter().find(|&&v| v >= self.equality.len()) {
            return Err(EngineError::UnknownVariable(bad));
        }
        let id = self.minimizers.len();
        for (slot, &v) in vars.iter().enumerate() {
            self.equality[v].edges.push((id, slot));
        }
        self.minimizers.push(MinimizerNode {
            kind,
            edges: vars.iter().map(|&v| EdgeState::new(v)).collect(),
            rng: ChaCha8Rng::seed_from_u64(0),
        });
        Ok(id)
    }

    pub fn edge_count(&self) -> usize {
        self.minimizers.iter().map(|m| m.edges.len()).sum()
    }

    pub fn z(&self) -> Vec<Vec2> {
        self.equality.iter().map(|e| e.z).collect()
    }

    pub fn set_z(&mut self, var: usize, value: Vec2) {
        let node = &mut self.equality[var];
        node.z = node.fixed.unwrap_or(value);
    }

    /// Sets the value used by [`InitMode::AtStart`].
    pub fn set_home(&mut self, var: usize, value: Vec2) {
        self.equality[var].home = value;
    }

    /// Reseeds every minimizer's tie-breaking stream. Each node gets its own
    /// stream so results do not depend on evaluation order.
    pub fn seed(&mut self, seed: u64) {
        for (i, m) in self.minimizers.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            m.rng = rng;
        }
    }

    /// Largest hard-constraint violation at the current consensus.
    pub fn max_violation(&self) -> f64 {
        let z = &self.equality;
        self.minimizers
            .iter()
            .filter(|m| m.kind.is_hard())
            .map(|m| m.kind.violation(&m.gather(z)[..m.edges.len()]))
            .fold(0.0, f64::max)
    }

    /// Sum of soft terms at the current consensus.
    pub fn objective(&self) -> Option<f64> {
        let z = &self.equality;
        let mut any = false;
        let mut total = 0.0;
        for m in self.minimizers.iter().filter(|m| !m.kind.is_hard()) {
            any = true;
            total += m.kind.cost(&m.gather(z)[..m.edges.len()]);
        }
        any.then_some(total)
    }
}

impl MinimizerNode {
    /// Consensus values at this node's edges, in slot order.
    fn gather(&self, z: &[EqualityNode]) -> [Vec2; 4] {
        let mut out = [Vec2::ZERO; 4];
        for (o, e) in out.iter_mut().zip(&self.edges) {
            *o = z[e.var].z;
        }
        out
    }
}

/// Resets messages and places every free variable. `bounds` is the sampling
/// box for [`InitMode::RandomBox`].
pub fn initialize(graph: &mut FactorGraph, mode: InitMode, bounds: (Vec2, Vec2)) {
    let mut rng = match mode {
        InitMode::RandomBox { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        InitMode::AtStart => None,
    };
    let (lo, hi) = bounds;
    for node in &mut graph.equality {
        node.z = match (node.fixed, rng.as_mut()) {
            (Some(f), _) => f,
            (None, None) => node.home,
            (None, Some(r)) => Vec2::new(sample(r, lo.x, hi.x), sample(r, lo.y, hi.y)),
        };
    }
    for m in &mut graph.minimizers {
        for e in &mut m.edges {
            e.u = Vec2::ZERO;
            e.x = Vec2::ZERO;
            e.n = Vec2::ZERO;
            e.m = Vec2::ZERO;
            e.fwd = Weight::Standard;
            e.rev = Weight::Standard;
        }
    }
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeSummary {
    infinite: usize,
    nonzero: usize,
    pinned: bool,
}

#[inline]
fn weight_value(w: Weight, rho0: f64, inf: f64) -> f64 {
    match w {
        Weight::Zero => 0.0,
        Weight::Standard => rho0,
        Weight::Infinite => inf,
    }
}

/// One full update cycle. `iter` selects the warm-up weight.
pub fn run_iteration(graph: &mut FactorGraph, config: &SolverConfig, iter: usize) -> Result<IterationStats, EngineError> {
    let rho0 = config.effective_rho0(iter);
    let opts = config.minimizer_options();
    let admm = config.admm_mode;

    // Steps 1-4: messages out of the equality nodes, local minimizations,
    // outgoing weights and messages back.
    let eq = &graph.equality;
    let active = graph
        .minimizers
        .par_iter_mut()
        .enumerate()
        .map(|(id, node)| {
            let k = node.edges.len();
            let mut n = [Vec2::ZERO; 4];
            let mut rho = [0.0; 4];
            for (slot, e) in node.edges.iter_mut().enumerate() {
                e.n = eq[e.var].z - e.u;
                n[slot] = e.n;
                rho[slot] = weight_value(e.rev, rho0, config.infinity_surrogate);
            }
            let mut x = [Vec2::ZERO; 4];
            let w = node
                .kind
                .evaluate(&n[..k], &rho[..k], &mut x[..k], &opts, &mut node.rng)
                .map_err(|source| EngineError::Minimizer { node: id, source })?;
            let w = if admm { Weight::Standard } else { w };
            for (slot, e) in node.edges.iter_mut().enumerate() {
                e.x = x[slot];
                e.fwd = w;
                e.m = e.x + e.u;
            }
            Ok(usize::from(node.kind.is_hard() && w != Weight::Zero))
        })
        .collect::<Result<Vec<usize>, EngineError>>()?
        .into_iter()
        .sum();

    // Step 5: weighted consensus.
    let mins = &graph.minimizers;
    let feas_tol = config.feas_tol;
    let updates = graph
        .equality
        .par_iter()
        .enumerate()
        .map(|(j, node)| {
            let mut s = NodeSummary { pinned: node.fixed.is_some() && !admm, ..Default::default() };
            for &(b, slot) in &node.edges {
                match mins[b].edges[slot].fwd {
                    Weight::Infinite => s.infinite += 1,
                    Weight::Standard => s.nonzero += 1,
                    Weight::Zero => {}
                }
            }
            s.nonzero += s.infinite;
            let z = match node.fixed {
                Some(f) => f,
                None => consensus(j, node, mins, rho0, feas_tol)?,
            };
            Ok((z, s))
        })
        .collect::<Result<Vec<(Vec2, NodeSummary)>, EngineError>>()?;

    let mut max_residual: f64 = 0.0;
    for (node, (z, _)) in graph.equality.iter_mut().zip(&updates) {
        max_residual = max_residual.max((*z - node.z).inf_norm());
        node.z = *z;
    }

    // Steps 6-7: weights back to the minimizers and running sums.
    let eq = &graph.equality;
    let gain = config.step_alpha / config.gain_rho0(iter);
    let max_disagreement = graph
        .minimizers
        .par_iter_mut()
        .map(|node| {
            let mut worst: f64 = 0.0;
            for e in &mut node.edges {
                let z = eq[e.var].z;
                e.rev = if admm {
                    Weight::Standard
                } else {
                    let s = updates[e.var].1;
                    let own_inf = usize::from(e.fwd == Weight::Infinite);
                    let own_nonzero = usize::from(e.fwd != Weight::Zero);
                    if s.pinned || s.infinite > own_inf {
                        Weight::Infinite
                    } else if s.nonzero == own_nonzero {
                        Weight::Zero
                    } else {
                        Weight::Standard
                    }
                };
                if e.fwd == Weight::Standard && e.rev == Weight::Standard {
                    e.u += (e.x - z) * gain;
                } else {
                    e.u = Vec2::ZERO;
                }
                worst = worst.max((e.x - z).inf_norm());
            }
            worst
        })
        .reduce(|| 0.0, f64::max);

    Ok(IterationStats {
        iter,
        rho0,
        max_residual,
        max_disagreement,
        active_constraints: active,
        max_violation: graph.max_violation(),
        objective: graph.objective(),
    })
}

fn consensus(
    j: usize,
    node: &EqualityNode,
    mins: &[MinimizerNode],
    rho0: f64,
    feas_tol: f64,
) -> Result<Vec2, EngineError> {
    let edges = || node.edges.iter().map(|&(b, slot)| &mins[b].edges[slot]);
    if edges().any(|e| e.fwd == Weight::Infinite) {
        let certain: Vec<Vec2> = edges().filter(|e| e.fwd == Weight::Infinite).map(|e| e.m).collect();
        let mut sum = Vec2::ZERO;
        for &m in &certain {
            sum += m;
        }
        let mean = sum / certain.len() as f64;
        let spread = certain.iter().map(|&m| (m - certain[0]).inf_norm()).fold(0.0, f64::max);
        if spread > feas_tol {
            return Err(EngineError::ConflictingCertainty { node: j, spread });
        }
        return Ok(mean);
    }
    let mut num = Vec2::ZERO;
    let mut den = 0.0;
    for e in edges() {
        let w = weight_value(e.fwd, rho0, 0.0);
        num += e.m * w;
        den += w;
    }
    if den > 0.0 {
        return Ok(num / den);
    }
    // Every incoming weight is zero: treat them all as one.
    let mut sum = Vec2::ZERO;
    let mut count = 0usize;
    for e in edges() {
        sum += e.m;
        count += 1;
    }
    Ok(if count == 0 { node.z } else { sum / count as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Consensus values, one per equality node.
    pub z: Vec<Vec2>,
    pub iterations: usize,
    pub max_violation: f64,
    pub trace: Vec<IterationStats>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    /// The iteration cap was hit; carries the iterate with the smallest
    /// hard-constraint violation.
    #[error("not converged after {} iterations (best violation {})", .0.iterations, .0.max_violation)]
    NonConverged(Box<Solution>),
}

/// Iterates until every hard constraint holds at the consensus within
/// `feas_tol` and the consensus moved less than `res_tol`.
pub fn run_until_converged(graph: &mut FactorGraph, config: &SolverConfig) -> Result<Solution, SolveError> {
    run_until_converged_with(graph, config, |_, _| {})
}

/// Like [`run_until_converged`], calling `observer` after every iteration.
pub fn run_until_converged_with<F>(
    graph: &mut FactorGraph,
    config: &SolverConfig,
    mut observer: F,
) -> Result<Solution, SolveError>
where
    F: FnMut(&IterationStats, &FactorGraph),
{
    graph.seed(config.rng_seed);
    let mut trace = Vec::new();
    let mut best_z = graph.z();
    let mut best_violation = graph.max_violation();
    for iter in 0..config.max_iters {
        let stats = run_iteration(graph, config, iter)?;
        observer(&stats, graph);
        trace.push(stats);
        if stats.max_violation <= best_violation {
            best_violation = stats.max_violation;
            best_z = graph.z();
        }
        if stats.max_violation <= config.feas_tol && stats.max_residual < config.res_tol {
            return Ok(Solution {
                z: graph.z(),
                iterations: iter + 1,
                max_violation: stats.max_violation,
                trace,
            });
        }
    }
    Err(SolveError::NonConverged(Box::new(Solution {
        z: best_z,
        iterations: config.max_iters,
        max_violation: best_violation,
        trace,
    })))
}
