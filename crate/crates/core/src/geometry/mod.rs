//! Planar geometry: segments, capsules and the spring-slab solver used by the
//! collision minimizers.

mod spring_slab;
mod vec2;

pub use spring_slab::{
    solve_spring_slab, tangent_energy, SlabOptions, SlabScenario, SlabSolution,
    SpringSlabProblem, TangentEnergy,
};
pub use vec2::Vec2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no feasible spring-slab configuration among {candidates} candidates")]
    NoFeasibleConfiguration { candidates: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Segment { a, b }
    }

    pub fn point(a: Vec2) -> Self {
        Segment { a, b: a }
    }

    pub fn at(&self, t: f64) -> Vec2 {
        self.a.lerp(self.b, t)
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Region swept by a disc of `radius` whose centre moves along `seg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub seg: Segment,
    pub radius: f64,
}

impl Capsule {
    pub const fn new(seg: Segment, radius: f64) -> Self {
        Capsule { seg, radius }
    }

    /// Strict interior test.
    pub fn contains(&self, p: Vec2) -> bool {
        point_segment_distance(p, &self.seg) < self.radius
    }

    /// Support function plus radius: the largest `<y, n>` over the capsule,
    /// together with the end point that attains it.
    #[inline]
    pub fn support(&self, n: Vec2) -> (f64, Vec2) {
        let c = self.support_centre(n);
        (c.dot(n) + self.radius, c)
    }

    #[inline]
    fn support_centre(&self, n: Vec2) -> Vec2 {
        if (self.seg.b - self.seg.a).dot(n) >= 0.0 {
            self.seg.b
        } else {
            self.seg.a
        }
    }
}

/// Parameter of the point on `s` closest to `p`, clamped to `[0, 1]`.
pub fn closest_param(p: Vec2, s: &Segment) -> f64 {
    let d = s.b - s.a;
    let l2 = d.norm_sq();
    if l2 == 0.0 {
        return 0.0;
    }
    ((p - s.a).dot(d) / l2).clamp(0.0, 1.0)
}

pub fn point_segment_distance(p: Vec2, s: &Segment) -> f64 {
    (p - s.at(closest_param(p, s))).norm()
}

/// Minimum of `|(s.a + a (s.b - s.a)) - (t.a + b (t.b - t.a))|` over the unit
/// square. The objective is a convex quadratic in `(a, b)`, so the minimum is
/// either the interior critical point or lies on one of the four edges.
pub fn segment_distance(s: &Segment, t: &Segment) -> f64 {
    let u = s.b - s.a;
    let v = t.b - t.a;
    let w = s.a - t.a;
    let uu = u.norm_sq();
    let vv = v.norm_sq();
    let uv = u.dot(v);
    let det = uu * vv - uv * uv;
    if det > 1e-14 * uu * vv && det > 0.0 {
        let uw = u.dot(w);
        let vw = v.dot(w);
        let a = (uv * vw - vv * uw) / det;
        let b = (uu * vw - uv * uw) / det;
        if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) {
            return (w + u * a - v * b).norm();
        }
    }
    point_segment_distance(s.a, t)
        .min(point_segment_distance(s.b, t))
        .min(point_segment_distance(t.a, s))
        .min(point_segment_distance(t.b, s))
}

/// Signed clearance between a segment and a capsule: distance to the capsule
/// axis minus the radius.
pub fn capsule_clearance(s: &Segment, c: &Capsule) -> f64 {
    segment_distance(s, &c.seg) - c.radius
}

pub fn segment_intersects_capsule(s: &Segment, c: &Capsule) -> bool {
    capsule_clearance(s, c) < 0.0
}

/// `min_{a in [0,1]} |a d1 + (1 - a) d0|`.
pub fn min_relative_distance(d0: Vec2, d1: Vec2) -> f64 {
    let e = d1 - d0;
    let ee = e.norm_sq();
    if ee == 0.0 {
        return d0.norm();
    }
    let a = (-d0.dot(e) / ee).clamp(0.0, 1.0);
    (d0 + e * a).norm()
}

/// Point closest to `p` such that the segment from `from` to it stays outside
/// the capsule. This is the projection onto the complement of the capsule's
/// shadow as seen from `from`. `None` when `from` itself is inside.
pub fn shadow_projection(from: Vec2, p: Vec2, c: &Capsule) -> Option<Vec2> {
    let scale = 1.0 + from.norm().max(p.norm()).max(c.seg.a.norm()).max(c.seg.b.norm());
    if capsule_clearance(&Segment::point(from), c) < 0.0 {
        return None;
    }
    if capsule_clearance(&Segment::new(from, p), c) >= 0.0 {
        return Some(p);
    }
    // The shadow boundary is the visible part of the capsule plus the two
    // tangent rays from `from`. Collect every local minimum of the distance
    // on each smooth piece, and the piece ends, then keep the visible ones.
    let (a, b, r) = (c.seg.a, c.seg.b, c.radius);
    let mut cand = Vec::with_capacity(16);
    if let Some(dir) = (b - a).normalized() {
        let nu = dir.perp();
        for sgn in [1.0, -1.0] {
            let side = Segment::new(a + nu * (sgn * r), b + nu * (sgn * r));
            cand.push(side.at(closest_param(p, &side)));
            cand.push(side.a);
            cand.push(side.b);
        }
    }
    for o in [a, b] {
        if let Some(u) = (p - o).normalized() {
            cand.push(o + u * r);
        }
        let to = o - from;
        let l = to.norm();
        if l >= r && l > 0.0 {
            let beta = (r / l).asin();
            let reach = (l * l - r * r).max(0.0).sqrt();
            for side in [beta, -beta] {
                let u = (to / l).rotate(side);
                cand.push(from + u * (p - from).dot(u).max(reach));
            }
        }
    }
    cand.into_iter()
        .filter(|&x| capsule_clearance(&Segment::new(from, x), c) >= -1e-12 * scale)
        .min_by(|x, y| (*x - p).norm_sq().total_cmp(&(*y - p).norm_sq()))
}

/// Contact point between a capsule and a supporting line with outward
/// normal at angle `theta`.
pub fn contact_point(theta: f64, c: &Capsule) -> Vec2 {
    let n = Vec2::from_angle(theta);
    c.support_centre(n) + n * c.radius
}
