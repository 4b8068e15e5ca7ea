//! Proximal minimizers: each returns the argmin of its local function plus
//! `sum_k rho_k / 2 |x_k - n_k|^2`, together with the outgoing certainty.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Weight;
use crate::geometry::{
    capsule_clearance, min_relative_distance, shadow_projection, solve_spring_slab, Capsule, GeometryError, Segment,
    SlabOptions, SpringSlabProblem, Vec2,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MinimizerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("expected {expected} incident edges, got {got}")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizerOptions {
    pub zero_surrogate: f64,
    pub infinity_surrogate: f64,
    pub scan_points: usize,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        MinimizerOptions { zero_surrogate: 1e-8, infinity_surrogate: 1e8, scan_points: 1000 }
    }
}

impl MinimizerOptions {
    fn slab(&self) -> SlabOptions {
        SlabOptions { scan_points: self.scan_points, zero_surrogate: self.zero_surrogate }
    }

    #[inline]
    fn lift(&self, rho: f64) -> f64 {
        rho.max(self.zero_surrogate)
    }
}

/// Closed-form minimizer of `C |x - x_bar|^2` plus the two springs.
pub fn energy_minimizer(
    n: Vec2,
    n_bar: Vec2,
    rho: f64,
    rho_bar: f64,
    c: f64,
    opts: &MinimizerOptions,
) -> ([Vec2; 2], Weight) {
    let (rho, rho_bar) = (opts.lift(rho), opts.lift(rho_bar));
    let d = 2.0 * c * (rho + rho_bar) + rho * rho_bar;
    let gap = n_bar - n;
    let x = n + gap * (2.0 * c * rho_bar / d);
    let x_bar = n_bar - gap * (2.0 * c * rho / d);
    ([x, x_bar], Weight::Standard)
}

/// Shared KKT form of the velocity caps: with multiplier `lambda`, the
/// endpoints move toward (`lambda > 0`) or away from each other.
fn velocity_kkt(n: Vec2, n_bar: Vec2, rho: f64, rho_bar: f64, c: f64) -> [Vec2; 2] {
    let dist = (n - n_bar).norm();
    let lambda = (dist / c - 1.0) / (1.0 / rho + 1.0 / rho_bar);
    let d = rho * rho_bar + lambda * (rho + rho_bar);
    let gap = n_bar - n;
    [n + gap * (lambda * rho_bar / d), n_bar - gap * (lambda * rho / d)]
}

/// Projection onto `|x - x_bar| <= c` in the spring metric.
pub fn max_velocity_minimizer(
    n: Vec2,
    n_bar: Vec2,
    rho: f64,
    rho_bar: f64,
    c: f64,
    opts: &MinimizerOptions,
) -> ([Vec2; 2], Weight) {
    if (n - n_bar).norm() <= c {
        return ([n, n_bar], Weight::Zero);
    }
    (velocity_kkt(n, n_bar, opts.lift(rho), opts.lift(rho_bar), c), Weight::Standard)
}

/// Projection onto `|x - x_bar| >= c`. Coincident inputs have no preferred
/// separation direction; one is drawn from `rng`.
pub fn min_velocity_minimizer<R: Rng + ?Sized>(
    n: Vec2,
    n_bar: Vec2,
    rho: f64,
    rho_bar: f64,
    c: f64,
    opts: &MinimizerOptions,
    rng: &mut R,
) -> ([Vec2; 2], Weight) {
    if (n - n_bar).norm() >= c {
        return ([n, n_bar], Weight::Zero);
    }
    let (rho, rho_bar) = (opts.lift(rho), opts.lift(rho_bar));
    if n == n_bar {
        let e = Vec2::from_angle(rng.gen_range(0.0..std::f64::consts::TAU));
        log::debug!("min-velocity minimizer: coincident inputs at {n}, separating along {e}");
        let total = rho + rho_bar;
        return ([n - e * (c * rho_bar / total), n + e * (c * rho / total)], Weight::Standard);
    }
    (velocity_kkt(n, n_bar, rho, rho_bar, c), Weight::Standard)
}

/// Agent-obstacle minimizer: the slab `[x, x_bar]` must keep distance `r` from `wall`.
pub fn wall_minimizer<R: Rng + ?Sized>(
    n: Vec2,
    n_bar: Vec2,
    rho: f64,
    rho_bar: f64,
    r: f64,
    wall: Segment,
    opts: &MinimizerOptions,
    rng: &mut R,
) -> Result<([Vec2; 2], Weight), MinimizerError> {
    let r = if r > 0.0 { r } else { opts.zero_surrogate };
    let capsule = Capsule::new(wall, r);
    if capsule_clearance(&Segment::new(n, n_bar), &capsule) >= 0.0 {
        return Ok(([n, n_bar], Weight::Zero));
    }
    let problem = SpringSlabProblem { n, n_bar, rho, rho_bar, capsule };
    let s = solve_spring_slab(&problem, &opts.slab(), rng)?;
    Ok(([s.x, s.x_bar], Weight::Standard))
}

/// Spring-slab instance in the relative coordinate `v = x' - x` equivalent to
/// the agent-agent problem. Eliminating the mean coordinate of each pair
/// leaves a spring of stiffness `rho rho' / (rho + rho')` anchored at `n' - n`.
pub fn collision_reduction(n: [Vec2; 4], rho: [f64; 4], radius_sum: f64) -> SpringSlabProblem {
    let k = rho[0] * rho[2] / (rho[0] + rho[2]);
    let k_bar = rho[1] * rho[3] / (rho[1] + rho[3]);
    SpringSlabProblem {
        n: n[2] - n[0],
        n_bar: n[3] - n[1],
        rho: k,
        rho_bar: k_bar,
        capsule: Capsule::new(Segment::point(Vec2::ZERO), radius_sum),
    }
}

/// Maps a relative-coordinate solution back to the four agent positions. The
/// change `(n' - n) - v` is split between the pair inversely to stiffness.
pub fn collision_reconstruction(n: [Vec2; 4], rho: [f64; 4], v: Vec2, v_bar: Vec2) -> [Vec2; 4] {
    let d = (n[2] - n[0]) - v;
    let db = (n[3] - n[1]) - v_bar;
    let s = rho[0] + rho[2];
    let sb = rho[1] + rho[3];
    [
        n[0] + d * (rho[2] / s),
        n[1] + db * (rho[3] / sb),
        n[2] - d * (rho[0] / s),
        n[3] - db * (rho[1] / sb),
    ]
}

fn agent_order(n: &[Vec2; 4], rho: &[f64; 4]) -> Ordering {
    n[0].total_cmp(&n[2])
        .then(n[1].total_cmp(&n[3]))
        .then(rho[0].total_cmp(&rho[2]))
        .then(rho[1].total_cmp(&rho[3]))
}

/// Agent-agent minimizer. Edge order is `[x, x_bar, x', x_bar']`: agent one at
/// two consecutive break-points, then agent two.
pub fn collision_minimizer<R: Rng + ?Sized>(
    n: [Vec2; 4],
    rho: [f64; 4],
    r: f64,
    r_other: f64,
    opts: &MinimizerOptions,
    rng: &mut R,
) -> Result<([Vec2; 4], Weight), MinimizerError> {
    let radius_sum = r + r_other;
    if min_relative_distance(n[2] - n[0], n[3] - n[1]) >= radius_sum {
        return Ok((n, Weight::Zero));
    }
    // Solve in a canonical agent order so that swapping the agents swaps the
    // result exactly.
    if agent_order(&n, &rho) == Ordering::Greater {
        let sw = |a: [Vec2; 4]| [a[2], a[3], a[0], a[1]];
        let (x, w) = collision_minimizer(
            sw(n),
            [rho[2], rho[3], rho[0], rho[1]],
            r_other,
            r,
            opts,
            rng,
        )?;
        return Ok((sw(x), w));
    }
    let rho = rho.map(|p| opts.lift(p));
    let radius_sum = if radius_sum > 0.0 { radius_sum } else { opts.zero_surrogate };
    let problem = collision_reduction(n, rho, radius_sum);
    let s = solve_spring_slab(&problem, &opts.slab(), rng)?;
    Ok((collision_reconstruction(n, rho, s.x, s.x_bar), Weight::Standard))
}

/// Local-planner pair minimizer: the epoch start positions carry infinite
/// weight, only the epoch end positions are free.
///
/// In relative coordinates this is the projection of `n_other - n` out of
/// the shadow that the radius-sum disc casts from the relative start; the
/// correction is then shared in inverse proportion to the weights. Starts
/// that already overlap fall back to the collision minimizer with the
/// infinity surrogate.
pub fn vo_collision_minimizer<R: Rng + ?Sized>(
    n: Vec2,
    n_other: Vec2,
    rho: f64,
    rho_other: f64,
    start: Vec2,
    start_other: Vec2,
    r: f64,
    r_other: f64,
    opts: &MinimizerOptions,
    rng: &mut R,
) -> Result<([Vec2; 2], Weight), MinimizerError> {
    let radius_sum = r + r_other;
    let d0 = start_other - start;
    let g = n_other - n;
    if min_relative_distance(d0, g) >= radius_sum {
        return Ok(([n, n_other], Weight::Zero));
    }
    let radius_sum = if radius_sum > 0.0 { radius_sum } else { opts.zero_surrogate };
    let disc = Capsule::new(Segment::point(Vec2::ZERO), radius_sum);
    if let Some(v) = shadow_projection(d0, g, &disc) {
        let (rho, rho_other) = (opts.lift(rho), opts.lift(rho_other));
        let total = rho + rho_other;
        let delta = v - g;
        return Ok(([n - delta * (rho_other / total), n_other + delta * (rho / total)], Weight::Standard));
    }
    let inf = opts.infinity_surrogate;
    let (x, w) = collision_minimizer(
        [start, n, start_other, n_other],
        [inf, rho, inf, rho_other],
        r,
        r_other,
        opts,
        rng,
    )?;
    Ok(([x[1], x[3]], w))
}

/// Local-planner wall minimizer: nearest point to `n` reachable in a straight
/// line from `start` without touching the wall capsule.
pub fn vo_wall_minimizer<R: Rng + ?Sized>(
    n: Vec2,
    rho: f64,
    start: Vec2,
    r: f64,
    wall: Segment,
    opts: &MinimizerOptions,
    rng: &mut R,
) -> Result<(Vec2, Weight), MinimizerError> {
    let capsule = Capsule::new(wall, if r > 0.0 { r } else { opts.zero_surrogate });
    if capsule_clearance(&Segment::new(start, n), &capsule) >= 0.0 {
        return Ok((n, Weight::Zero));
    }
    if let Some(x) = shadow_projection(start, n, &capsule) {
        return Ok((x, Weight::Standard));
    }
    let (x, w) = wall_minimizer(start, n, opts.infinity_surrogate, rho, r, wall, opts, rng)?;
    Ok((x[1], w))
}

/// Pull toward `x_ref` with cost `c |x - x_ref|^2`; the infinite-weight limit
/// of the energy minimizer with its first end pinned at `x_ref`.
pub fn vo_cost_minimizer(n: Vec2, rho: f64, x_ref: Vec2, c: f64, opts: &MinimizerOptions) -> (Vec2, Weight) {
    let rho = opts.lift(rho);
    (n + (x_ref - n) * (2.0 * c / (2.0 * c + rho)), Weight::Standard)
}

/// A minimizer node's local function and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MinimizerKind {
    /// Edges: both agents at break-points `s`, `s + 1`, ordered `[i(s), i(s+1), j(s), j(s+1)]`.
    Collision { r: f64, r_other: f64 },
    Wall { r: f64, wall: Segment },
    Energy { c: f64 },
    MaxVelocity { c: f64 },
    MinVelocity { c: f64 },
    VoCollision { r: f64, r_other: f64, start: Vec2, start_other: Vec2 },
    VoWall { r: f64, wall: Segment, start: Vec2 },
    VoCost { c: f64, x_ref: Vec2 },
}

impl MinimizerKind {
    pub fn arity(&self) -> usize {
        match self {
            MinimizerKind::Collision { .. } => 4,
            MinimizerKind::Wall { .. }
            | MinimizerKind::Energy { .. }
            | MinimizerKind::MaxVelocity { .. }
            | MinimizerKind::MinVelocity { .. }
            | MinimizerKind::VoCollision { .. } => 2,
            MinimizerKind::VoWall { .. } | MinimizerKind::VoCost { .. } => 1,
        }
    }

    /// Whether the local function is an indicator (hard constraint).
    pub fn is_hard(&self) -> bool {
        !matches!(self, MinimizerKind::Energy { .. } | MinimizerKind::VoCost { .. })
    }

    /// Amount by which `z` violates the constraint, zero for soft terms.
    pub fn violation(&self, z: &[Vec2]) -> f64 {
        match *self {
            MinimizerKind::Collision { r, r_other } => {
                (r + r_other - min_relative_distance(z[2] - z[0], z[3] - z[1])).max(0.0)
            }
            MinimizerKind::Wall { r, wall } => {
                (-capsule_clearance(&Segment::new(z[0], z[1]), &Capsule::new(wall, r))).max(0.0)
            }
            MinimizerKind::MaxVelocity { c } => ((z[0] - z[1]).norm() - c).max(0.0),
            MinimizerKind::MinVelocity { c } => (c - (z[0] - z[1]).norm()).max(0.0),
            MinimizerKind::VoCollision { r, r_other, start, start_other } => {
                (r + r_other - min_relative_distance(start_other - start, z[1] - z[0])).max(0.0)
            }
            MinimizerKind::VoWall { r, wall, start } => {
                (-capsule_clearance(&Segment::new(start, z[0]), &Capsule::new(wall, r))).max(0.0)
            }
            MinimizerKind::Energy { .. } | MinimizerKind::VoCost { .. } => 0.0,
        }
    }

    /// Value of a soft term at `z`, zero for constraints.
    pub fn cost(&self, z: &[Vec2]) -> f64 {
        match *self {
            MinimizerKind::Energy { c } => c * (z[0] - z[1]).norm_sq(),
            MinimizerKind::VoCost { c, x_ref } => c * (z[0] - x_ref).norm_sq(),
            _ => 0.0,
        }
    }

    /// Runs the minimizer on incoming messages `n` with numeric weights `rho`,
    /// writing the local estimates into `out`.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        n: &[Vec2],
        rho: &[f64],
        out: &mut [Vec2],
        opts: &MinimizerOptions,
        rng: &mut R,
    ) -> Result<Weight, MinimizerError> {
        let k = self.arity();
        if n.len() != k || rho.len() != k || out.len() != k {
            return Err(MinimizerError::Arity { expected: k, got: n.len() });
        }
        let w = match *self {
            MinimizerKind::Collision { r, r_other } => {
                let (x, w) = collision_minimizer(
                    [n[0], n[1], n[2], n[3]],
                    [rho[0], rho[1], rho[2], rho[3]],
                    r,
                    r_other,
                    opts,
                    rng,
                )?;
                out.copy_from_slice(&x);
                w
            }
            MinimizerKind::Wall { r, wall } => {
                let (x, w) = wall_minimizer(n[0], n[1], rho[0], rho[1], r, wall, opts, rng)?;
                out.copy_from_slice(&x);
                w
            }
            MinimizerKind::Energy { c } => {
                let (x, w) = energy_minimizer(n[0], n[1], rho[0], rho[1], c, opts);
                out.copy_from_slice(&x);
                w
            }
            MinimizerKind::MaxVelocity { c } => {
                let (x, w) = max_velocity_minimizer(n[0], n[1], rho[0], rho[1], c, opts);
                out.copy_from_slice(&x);
                w
            }
            MinimizerKind::MinVelocity { c } => {
                let (x, w) = min_velocity_minimizer(n[0], n[1], rho[0], rho[1], c, opts, rng);
                out.copy_from_slice(&x);
                w
            }
            MinimizerKind::VoCollision { r, r_other, start, start_other } => {
                let (x, w) = vo_collision_minimizer(
                    n[0], n[1], rho[0], rho[1], start, start_other, r, r_other, opts, rng,
                )?;
                out.copy_from_slice(&x);
                w
            }
            MinimizerKind::VoWall { r, wall, start } => {
                let (x, w) = vo_wall_minimizer(n[0], rho[0], start, r, wall, opts, rng)?;
                out[0] = x;
                w
            }
            MinimizerKind::VoCost { c, x_ref } => {
                let (x, w) = vo_cost_minimizer(n[0], rho[0], x_ref, c, opts);
                out[0] = x;
                w
            }
        };
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn energy_examples() {
        let o = MinimizerOptions::default();
        let ([x, xb], w) = energy_minimizer(v(0.0, 0.0), v(4.0, 0.0), 2.0, 2.0, 1.0, &o);
        assert!(close(x, v(4.0 / 3.0, 0.0), 1e-12) && close(xb, v(8.0 / 3.0, 0.0), 1e-12));
        assert_eq!(w, Weight::Standard);
        let ([x, xb], _) = energy_minimizer(v(1.0, 2.0), v(3.0, -1.0), 0.7, 1.3, 0.0, &o);
        assert_eq!((x, xb), (v(1.0, 2.0), v(3.0, -1.0)));
        let ([x, xb], _) = energy_minimizer(v(1.0, 2.0), v(1.0, 2.0), 0.7, 1.3, 5.0, &o);
        assert_eq!((x, xb), (v(1.0, 2.0), v(1.0, 2.0)));
    }

    #[test]
    fn velocity_examples() {
        let o = MinimizerOptions::default();
        let (x, w) = max_velocity_minimizer(v(0.0, 0.0), v(2.0, 0.0), 1.0, 1.0, 3.0, &o);
        assert_eq!((x, w), ([v(0.0, 0.0), v(2.0, 0.0)], Weight::Zero));
        let ([x, xb], w) = max_velocity_minimizer(v(0.0, 0.0), v(2.0, 0.0), 1.0, 1.0, 1.0, &o);
        assert!(close(x, v(0.5, 0.0), 1e-12) && close(xb, v(1.5, 0.0), 1e-12));
        assert_eq!(w, Weight::Standard);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, w) = min_velocity_minimizer(v(0.0, 0.0), v(3.0, 0.0), 1.0, 1.0, 2.0, &o, &mut rng);
        assert_eq!((x, w), ([v(0.0, 0.0), v(3.0, 0.0)], Weight::Zero));
        let ([x, xb], _) = min_velocity_minimizer(v(0.0, 0.0), v(1.0, 0.0), 1.0, 1.0, 2.0, &o, &mut rng);
        assert!(close(x, v(-0.5, 0.0), 1e-12) && close(xb, v(1.5, 0.0), 1e-12));
    }

    #[test]
    fn min_velocity_coincident_inputs() {
        let o = MinimizerOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ([x, xb], w) = min_velocity_minimizer(v(1.0, 1.0), v(1.0, 1.0), 1.0, 3.0, 2.0, &o, &mut rng);
        assert_eq!(w, Weight::Standard);
        assert!(((x - xb).norm() - 2.0).abs() < 1e-12);
        // The stiffer end moves less.
        assert!((xb - v(1.0, 1.0)).norm() < (x - v(1.0, 1.0)).norm());
    }

    #[test]
    fn collision_inactive_and_swap() {
        let o = MinimizerOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let far = [v(0.0, 0.0), v(1.0, 0.0), v(0.0, 5.0), v(1.0, 5.0)];
        let (x, w) = collision_minimizer(far, [1.0; 4], 0.5, 0.5, &o, &mut rng).unwrap();
        assert_eq!((x, w), (far, Weight::Zero));

        let n = [v(0.0, 0.0), v(2.0, 0.1), v(2.0, 0.0), v(0.0, -0.2)];
        let rho = [1.0, 0.5, 2.0, 1.5];
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let (a, _) = collision_minimizer(n, rho, 0.5, 0.4, &o, &mut r1).unwrap();
        let (b, _) = collision_minimizer([n[2], n[3], n[0], n[1]], [rho[2], rho[3], rho[0], rho[1]], 0.4, 0.5, &o, &mut r2)
            .unwrap();
        assert_eq!(a, [b[2], b[3], b[0], b[1]]);
        assert!(min_relative_distance(a[2] - a[0], a[3] - a[1]) >= 0.9 - 1e-9);
    }

    #[test]
    fn vo_cost_is_weighted_mean() {
        let o = MinimizerOptions::default();
        let (x, w) = vo_cost_minimizer(v(1.0, 0.0), 2.0, v(3.0, 0.0), 1.0, &o);
        assert!(close(x, v(2.0, 0.0), 1e-12));
        assert_eq!(w, Weight::Standard);
        assert_eq!(vo_cost_minimizer(v(1.0, 0.0), 2.0, v(3.0, 0.0), 0.0, &o).0, v(1.0, 0.0));
    }
}
