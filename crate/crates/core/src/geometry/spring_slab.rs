//! Minimum-energy configuration of two zero-rest-length springs joined by a
//! freely extensible slab that may not cross a capsule.
//!
//! The optimum is either a slab lying on a supporting line of the capsule
//! (parameterised by the line's outward normal angle) or a configuration where
//! one spring is slack and the other end sits on the capsule boundary.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use rand::Rng;

use super::{capsule_clearance, point_segment_distance, Capsule, GeometryError, Segment, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpringSlabProblem {
    pub n: Vec2,
    pub n_bar: Vec2,
    pub rho: f64,
    pub rho_bar: f64,
    pub capsule: Capsule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentEnergy {
    pub e: f64,
    pub de: f64,
    pub d2e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlabScenario {
    /// The anchors already form a feasible slab.
    Untouched,
    /// Slab on a supporting line of the capsule.
    Tangent,
    /// One spring slack, the other end on the capsule boundary.
    Compressed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabSolution {
    pub x: Vec2,
    pub x_bar: Vec2,
    pub scenario: SlabScenario,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabOptions {
    /// Number of equally spaced angles in the initial scan.
    pub scan_points: usize,
    /// Stiffness (and radius) used in place of zero.
    pub zero_surrogate: f64,
}

impl Default for SlabOptions {
    fn default() -> Self {
        SlabOptions { scan_points: 1000, zero_surrogate: 1e-8 }
    }
}

const FEAS_EPS: f64 = 1e-9;
const TIE_REL: f64 = 1e-12;
const MAX_REFINED: usize = 8;
const GOLDEN_ITERS: usize = 30;

/// Tangent energy and its first two derivatives in `theta`. `P(theta)` switches
/// end cap where `<x_R - x_L, n(theta)>` changes sign; derivatives are taken
/// within the active branch.
pub fn tangent_energy(theta: f64, p: &SpringSlabProblem) -> TangentEnergy {
    let nh = Vec2::from_angle(theta);
    let nd = nh.perp();
    let c = p.capsule.support_centre(nh);
    let r = p.capsule.radius;
    let mut out = TangentEnergy { e: 0.0, de: 0.0, d2e: 0.0 };
    for (anchor, k) in [(p.n, p.rho), (p.n_bar, p.rho_bar)] {
        let w = c - anchor;
        let g = w.dot(nh) + r;
        let gd = w.dot(nd);
        out.e += 0.5 * k * g * g;
        out.de += k * g * gd;
        out.d2e += k * (gd * gd - g * (g - r));
    }
    out
}

#[inline]
fn energy_at(nh: Vec2, p: &SpringSlabProblem) -> f64 {
    let (h, _) = p.capsule.support(nh);
    let g = h - p.n.dot(nh);
    let gb = h - p.n_bar.dot(nh);
    0.5 * (p.rho * g * g + p.rho_bar * gb * gb)
}

fn default_table() -> &'static [Vec2] {
    static TABLE: OnceLock<Vec<Vec2>> = OnceLock::new();
    TABLE.get_or_init(|| build_table(SlabOptions::default().scan_points))
}

fn build_table(n: usize) -> Vec<Vec2> {
    (0..n).map(|i| Vec2::from_angle(TAU * i as f64 / n as f64)).collect()
}

fn golden_min(p: &SpringSlabProblem, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let f = |t: f64| energy_at(Vec2::from_angle(t), p);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..GOLDEN_ITERS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Safeguarded Newton iteration on the derivative: steps are accepted only
/// when they shrink `|dE|` and stay inside `[lo, hi]`. Near a minimum the
/// energy is too flat to compare, the derivative still is not.
fn newton_polish(p: &SpringSlabProblem, mut theta: f64, lo: f64, hi: f64, iters: usize) -> f64 {
    let mut cur = tangent_energy(theta, p);
    for _ in 0..iters {
        if cur.d2e <= 0.0 || cur.de == 0.0 {
            break;
        }
        let mut step = -cur.de / cur.d2e;
        let mut accepted = false;
        for _ in 0..4 {
            let t = theta + step;
            if t >= lo && t <= hi {
                let next = tangent_energy(t, p);
                if next.de.abs() < cur.de.abs() {
                    theta = t;
                    cur = next;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    theta
}

/// Multistart Newton with a gradient fallback where the curvature is negative.
fn newton_from(p: &SpringSlabProblem, start: f64) -> f64 {
    let mut theta = start;
    let mut cur = tangent_energy(theta, p);
    let mut step_cap = PI / 8.0;
    for _ in 0..40 {
        if cur.de == 0.0 {
            break;
        }
        let raw = if cur.d2e > 0.0 { -cur.de / cur.d2e } else { -cur.de.signum() * step_cap };
        let mut step = raw.clamp(-step_cap, step_cap);
        let mut accepted = false;
        for _ in 0..20 {
            let next = tangent_energy(theta + step, p);
            if next.e < cur.e {
                theta += step;
                cur = next;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if cur.d2e > 0.0 {
                // Converged to rounding; the derivative polish takes over.
                break;
            }
            step_cap *= 0.25;
            if step_cap < 1e-14 {
                break;
            }
        }
    }
    theta.rem_euclid(TAU)
}

/// Angles of candidate tangent configurations: refined local minima of the
/// scan, multistart Newton results and the two cap-switch angles.
fn tangent_angles(p: &SpringSlabProblem, scan_points: usize) -> Vec<f64> {
    let owned;
    let table: &[Vec2] = if scan_points == SlabOptions::default().scan_points {
        default_table()
    } else {
        owned = build_table(scan_points.max(8));
        &owned
    };
    let n = table.len();
    let step = TAU / n as f64;
    let values: Vec<f64> = table.iter().map(|&nh| energy_at(nh, p)).collect();

    let mut minima: Vec<usize> = (0..n)
        .filter(|&i| {
            let prev = values[(i + n - 1) % n];
            let next = values[(i + 1) % n];
            values[i] <= prev && values[i] <= next
        })
        .collect();
    minima.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    minima.truncate(MAX_REFINED);

    let mut out = Vec::with_capacity(minima.len() + 6);
    for i in minima {
        let centre = i as f64 * step;
        let (lo, hi) = (centre - step, centre + step);
        let t = golden_min(p, lo, hi);
        out.push(newton_polish(p, t, lo, hi, 8));
    }
    for k in 0..4 {
        let t = newton_from(p, k as f64 * PI / 2.0);
        out.push(newton_polish(p, t, t - step, t + step, 8));
    }
    let axis = p.capsule.seg.b - p.capsule.seg.a;
    if axis.norm_sq() > 0.0 {
        let phi = axis.y.atan2(axis.x);
        out.push(phi + PI / 2.0);
        out.push(phi - PI / 2.0);
    }
    out
}

/// Boundary points of the capsule that are candidates for the free end when
/// the other end is pinned at `pinned`.
fn compressed_positions(free: Vec2, pinned: Vec2, cap: &Capsule, out: &mut Vec<Vec2>) {
    let (a, b, r) = (cap.seg.a, cap.seg.b, cap.radius);
    let axis = b - a;
    if let Some(dir) = axis.normalized() {
        let nu = dir.perp();
        for sgn in [1.0, -1.0] {
            let side = Segment::new(a + nu * (sgn * r), b + nu * (sgn * r));
            out.push(side.at(super::closest_param(free, &side)));
            out.push(side.a);
            out.push(side.b);
        }
    }
    let centres: &[Vec2] = if axis.norm_sq() > 0.0 { &[a, b] } else { &[a] };
    for &o in centres {
        if let Some(u) = (free - o).normalized() {
            out.push(o + u * r);
        }
        let dq = pinned - o;
        let l = dq.norm();
        if l > r {
            let beta = (r / l).acos();
            let u = dq / l;
            out.push(o + u.rotate(beta) * r);
            out.push(o + u.rotate(-beta) * r);
        }
    }
}

struct Candidate {
    x: Vec2,
    x_bar: Vec2,
    scenario: SlabScenario,
    energy: f64,
}

/// Solves the spring-slab problem. Zero stiffnesses are lifted to
/// `opts.zero_surrogate`, which is the small-equal-weights limit when both
/// vanish.
pub fn solve_spring_slab<R: Rng + ?Sized>(
    problem: &SpringSlabProblem,
    opts: &SlabOptions,
    rng: &mut R,
) -> Result<SlabSolution, GeometryError> {
    let mut p = *problem;
    p.rho = p.rho.max(opts.zero_surrogate);
    p.rho_bar = p.rho_bar.max(opts.zero_surrogate);
    if !(p.capsule.radius > 0.0) {
        p.capsule.radius = opts.zero_surrogate;
    }
    let cap = p.capsule;

    if capsule_clearance(&Segment::new(p.n, p.n_bar), &cap) >= 0.0 {
        return Ok(SlabSolution {
            x: p.n,
            x_bar: p.n_bar,
            scenario: SlabScenario::Untouched,
            energy: 0.0,
        });
    }

    let scale = [p.n, p.n_bar, cap.seg.a, cap.seg.b]
        .iter()
        .map(|v| v.inf_norm())
        .fold(cap.radius.max(1.0), f64::max);
    let tol = FEAS_EPS * scale;
    let energy = |x: Vec2, xb: Vec2| 0.5 * (p.rho * (x - p.n).norm_sq() + p.rho_bar * (xb - p.n_bar).norm_sq());

    let mut cands: Vec<Candidate> = Vec::new();
    let mut tried = 0usize;
    let mut push = |x: Vec2, x_bar: Vec2, scenario: SlabScenario, cands: &mut Vec<Candidate>| {
        tried += 1;
        if capsule_clearance(&Segment::new(x, x_bar), &cap) >= -tol {
            cands.push(Candidate { x, x_bar, scenario, energy: energy(x, x_bar) });
        }
    };

    for theta in tangent_angles(&p, opts.scan_points) {
        let nh = Vec2::from_angle(theta);
        let (h, _) = cap.support(nh);
        let x = p.n + nh * (h - p.n.dot(nh));
        let x_bar = p.n_bar + nh * (h - p.n_bar.dot(nh));
        push(x, x_bar, SlabScenario::Tangent, &mut cands);
    }

    let inside = point_segment_distance(p.n, &cap.seg) < cap.radius;
    let inside_bar = point_segment_distance(p.n_bar, &cap.seg) < cap.radius;
    let mut spots = Vec::new();
    if !inside_bar {
        compressed_positions(p.n, p.n_bar, &cap, &mut spots);
        for &x in &spots {
            push(x, p.n_bar, SlabScenario::Compressed, &mut cands);
        }
    }
    if !inside {
        spots.clear();
        compressed_positions(p.n_bar, p.n, &cap, &mut spots);
        for &xb in &spots {
            push(p.n, xb, SlabScenario::Compressed, &mut cands);
        }
    }

    let best = cands
        .iter()
        .map(|c| c.energy)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(GeometryError::NoFeasibleConfiguration { candidates: tried });
    }
    let cutoff = best + TIE_REL * best.max(f64::MIN_POSITIVE);
    let mut ties: Vec<&Candidate> = Vec::new();
    for c in cands.iter().filter(|c| c.energy <= cutoff) {
        let dup = ties
            .iter()
            .any(|t| (t.x - c.x).inf_norm() + (t.x_bar - c.x_bar).inf_norm() <= tol);
        if !dup {
            ties.push(c);
        }
    }
    let pick = if ties.len() > 1 { ties[rng.gen_range(0..ties.len())] } else { ties[0] };
    Ok(SlabSolution { x: pick.x, x_bar: pick.x_bar, scenario: pick.scenario, energy: pick.energy })
}
