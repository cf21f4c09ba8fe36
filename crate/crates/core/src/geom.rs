//! Planar primitives shared by the map, dynamics, sensors and collision code.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `angle` (radians, counter-clockwise from +x).
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product; positive when `o` is left of `self`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotated 90 degrees counter-clockwise.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(p: [f64; 2]) -> Self {
        Vec2::new(p[0], p[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(p: Vec2) -> Self {
        [p.x, p.y]
    }
}

/// Normalizes an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            position: Vec2::new(x, y),
            heading,
        }
    }
}

/// Closest-point query result against a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point, in `[0, length]`.
    pub station: f64,
    /// Signed distance; positive left of the direction of travel.
    pub offset: f64,
    pub segment: usize,
}

/// Segments per bounding box of the projection index.
const CHUNK: usize = 8;

/// A polyline with cached cumulative arc length and per-chunk bounds for
/// fast closest-point queries on long lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
    chunks: Vec<(Vec2, Vec2)>,
}

/// Squared distance from `p` to an axis-aligned box.
fn box_dist2(p: Vec2, (lo, hi): (Vec2, Vec2)) -> f64 {
    let dx = (lo.x - p.x).max(p.x - hi.x).max(0.0);
    let dy = (lo.y - p.y).max(p.y - hi.y).max(0.0);
    dx * dx + dy * dy
}

fn bounds_of(points: &[Vec2]) -> (Vec2, Vec2) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

impl Polyline {
    /// Returns `None` for fewer than two points or a zero-length segment.
    pub fn new(points: Vec<Vec2>) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for w in points.windows(2) {
            let len = w[0].distance(w[1]);
            if !(len > 0.0) || !len.is_finite() {
                return None;
            }
            cumulative.push(cumulative.last().unwrap() + len);
        }
        let n_seg = points.len() - 1;
        let chunks = (0..n_seg)
            .step_by(CHUNK)
            .map(|s| bounds_of(&points[s..=(s + CHUNK).min(n_seg)]))
            .collect();
        Some(Self {
            points,
            cumulative,
            chunks,
        })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    pub fn segment(&self, i: usize) -> (Vec2, Vec2) {
        (self.points[i], self.points[i + 1])
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    fn chunk_segments(&self, c: usize) -> std::ops::Range<usize> {
        c * CHUNK..((c + 1) * CHUNK).min(self.segment_count())
    }

    /// Closest point on the polyline. Ties go to the lowest segment index.
    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = Projection {
            station: 0.0,
            offset: f64::INFINITY,
            segment: 0,
        };
        let mut best_d2 = f64::INFINITY;
        let visit = |i: usize, best: &mut Projection, best_d2: &mut f64| {
            let (a, b) = self.segment(i);
            let ab = b - a;
            let len2 = ab.norm_sq();
            let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
            let closest = a + ab * t;
            let d2 = (p - closest).norm_sq();
            if d2 < *best_d2 || (d2 == *best_d2 && i < best.segment) {
                *best_d2 = d2;
                let side = ab.cross(p - a);
                let d = d2.sqrt();
                *best = Projection {
                    station: self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]),
                    offset: if side < 0.0 { -d } else { d },
                    segment: i,
                };
            }
        };
        let lower: Vec<f64> = self.chunks.iter().map(|&b| box_dist2(p, b)).collect();
        let seed = (0..lower.len())
            .min_by(|&a, &b| lower[a].total_cmp(&lower[b]))
            .unwrap();
        for i in self.chunk_segments(seed) {
            visit(i, &mut best, &mut best_d2);
        }
        for (c, &lb) in lower.iter().enumerate() {
            if c == seed || lb > best_d2 {
                continue;
            }
            for i in self.chunk_segments(c) {
                visit(i, &mut best, &mut best_d2);
            }
        }
        best
    }

    fn segment_at(&self, station: f64) -> usize {
        let s = station.clamp(0.0, self.length());
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.segment_count() - 1),
            Err(i) => (i - 1).min(self.segment_count() - 1),
        }
    }

    /// Point at arc length `station` (clamped to the polyline).
    pub fn point_at(&self, station: f64) -> Vec2 {
        let s = station.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let (a, b) = self.segment(i);
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        a.lerp(b, (s - self.cumulative[i]) / seg_len)
    }

    /// Travel direction (radians) of the segment containing `station`.
    pub fn heading_at(&self, station: f64) -> f64 {
        let (a, b) = self.segment(self.segment_at(station));
        (b - a).angle()
    }

    pub fn pose_at(&self, station: f64) -> Pose {
        Pose {
            position: self.point_at(station),
            heading: self.heading_at(station),
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        bounds_of(&self.points)
    }

    /// True when `p` lies on the rectangle swept by each segment at
    /// half-width `half_width`, with round joins at interior vertices and flat
    /// caps at both ends.
    pub fn surface_contains(&self, p: Vec2, half_width: f64) -> bool {
        let last = self.segment_count() - 1;
        let hw2 = half_width * half_width;
        for (c, &b) in self.chunks.iter().enumerate() {
            if box_dist2(p, b) > hw2 {
                continue;
            }
            for i in self.chunk_segments(c) {
                let (a, b) = self.segment(i);
                let ab = b - a;
                let t = (p - a).dot(ab) / ab.norm_sq();
                if (i == 0 && t < 0.0) || (i == last && t > 1.0) {
                    continue;
                }
                let closest = a + ab * t.clamp(0.0, 1.0);
                if (p - closest).norm_sq() <= hw2 {
                    return true;
                }
            }
        }
        false
    }
}

/// Oriented rectangle used as a vehicle footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    /// Unit vectors along the length and width.
    pub fn axes(&self) -> (Vec2, Vec2) {
        let f = Vec2::from_angle(self.heading);
        (f, f.perp())
    }

    /// Corners in order front-left, front-right, rear-right, rear-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let (f, l) = self.axes();
        let fl = f * self.half_length;
        let lw = l * self.half_width;
        [
            self.center + fl + lw,
            self.center + fl - lw,
            self.center - fl - lw,
            self.center - fl + lw,
        ]
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_length * self.half_width
    }

    pub fn bounding_radius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }

    /// World point expressed in the rectangle frame (x forward, y left).
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let (f, l) = self.axes();
        let d = p - self.center;
        Vec2::new(d.dot(f), d.dot(l))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.half_length && q.y.abs() <= self.half_width
    }

    /// Separating-axis overlap test. Touching boundaries count as overlap.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let r = self.bounding_radius() + other.bounding_radius();
        if (self.center - other.center).norm_sq() > r * r {
            return false;
        }
        let (a0, a1) = self.axes();
        let (b0, b1) = other.axes();
        let d = other.center - self.center;
        for axis in [a0, a1, b0, b1] {
            let ra = self.half_length * a0.dot(axis).abs() + self.half_width * a1.dot(axis).abs();
            let rb =
                other.half_length * b0.dot(axis).abs() + other.half_width * b1.dot(axis).abs();
            if d.dot(axis).abs() > ra + rb {
                return false;
            }
        }
        true
    }

    /// Parametric entry of the segment `origin + t * dir`, `t in [0, t_max]`,
    /// into the rectangle. Returns 0 when the origin is inside.
    pub fn ray_entry(&self, origin: Vec2, dir: Vec2, t_max: f64) -> Option<f64> {
        let (f, l) = self.axes();
        let o = origin - self.center;
        let (ox, oy) = (o.dot(f), o.dot(l));
        let (dx, dy) = (dir.dot(f), dir.dot(l));
        let mut t0 = 0.0_f64;
        let mut t1 = t_max;
        for (oc, dc, half) in [(ox, dx, self.half_length), (oy, dy, self.half_width)] {
            if dc == 0.0 {
                if oc.abs() > half {
                    return None;
                }
            } else {
                let inv = 1.0 / dc;
                let mut ta = (-half - oc) * inv;
                let mut tb = (half - oc) * inv;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some(t0)
    }

    /// True when the open segment `a -> b` passes through the interior
    /// (grazing the boundary does not count).
    pub fn segment_crosses_interior(&self, a: Vec2, b: Vec2) -> bool {
        const EPS: f64 = 1e-9;
        let (f, l) = self.axes();
        let o = a - self.center;
        let d = b - a;
        let (ox, oy) = (o.dot(f), o.dot(l));
        let (dx, dy) = (d.dot(f), d.dot(l));
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for (oc, dc, half) in [
            (ox, dx, self.half_length - EPS),
            (oy, dy, self.half_width - EPS),
        ] {
            if dc == 0.0 {
                if oc.abs() >= half {
                    return false;
                }
            } else {
                let inv = 1.0 / dc;
                let mut ta = (-half - oc) * inv;
                let mut tb = (half - oc) * inv;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 >= t1 {
                    return false;
                }
            }
        }
        true
    }
}
