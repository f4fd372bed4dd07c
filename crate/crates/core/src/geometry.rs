//! Planar geometry shared by the scene, labeling and evaluation modules.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Vec2::new(c, s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

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

    /// Rotates counter-clockwise by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
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

/// A rigid 2-D frame: world points map to local coordinates with the origin
/// at `origin` and +x along `heading`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub origin: Vec2,
    pub heading: f64,
}

impl Frame {
    pub fn new(origin: Vec2, heading: f64) -> Self {
        Frame { origin, heading }
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotate(-self.heading)
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        p.rotate(self.heading) + self.origin
    }

    pub fn heading_to_local(&self, h: f64) -> f64 {
        crate::kinematics::normalize_angle(h - self.heading)
    }
}

/// Oriented bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Obb {
            center,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.heading);
        [u, u.perp()]
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let l = u * self.half_length;
        let w = v * self.half_width;
        let c = self.center;
        [c + l + w, c - l + w, c - l - w, c + l - w]
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let [u, v] = self.axes();
        let c = self.center.dot(axis);
        let r = self.half_length * u.dot(axis).abs() + self.half_width * v.dot(axis).abs();
        (c - r, c + r)
    }

    /// Separating-axis overlap test. Touching boxes count as overlapping.
    pub fn overlaps(&self, other: &Obb) -> bool {
        self.separation(other) <= 0.0
    }

    /// Largest gap between the projections over the four candidate axes.
    /// Positive means separated, non-positive means overlapping or touching.
    pub fn separation(&self, other: &Obb) -> f64 {
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        let mut best = f64::NEG_INFINITY;
        for axis in [a0, a1, b0, b1] {
            let (min_a, max_a) = self.project(axis);
            let (min_b, max_b) = other.project(axis);
            let gap = (min_b - max_a).max(min_a - max_b);
            best = best.max(gap);
        }
        best
    }

    /// Closed containment test in box-local coordinates.
    pub fn contains(&self, p: Vec2) -> bool {
        let [u, v] = self.axes();
        let d = p - self.center;
        d.dot(u).abs() <= self.half_length && d.dot(v).abs() <= self.half_width
    }
}

/// Shortest distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Signed area of a ring (positive for counter-clockwise winding).
pub fn signed_area(ring: &[Vec2]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += ring[i].cross(ring[(i + 1) % n]);
    }
    0.5 * acc
}

const ON_EDGE_EPS: f64 = 1e-9;

/// A simple polygon stored as an open ring with counter-clockwise winding.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    ring: Vec<Vec2>,
}

impl Polygon {
    /// Builds a polygon from an open or closed ring, normalizing the winding.
    pub fn new(mut ring: Vec<Vec2>) -> Self {
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if signed_area(&ring) < 0.0 {
            ring.reverse();
        }
        Polygon { ring }
    }

    pub fn ring(&self) -> &[Vec2] {
        &self.ring
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.ring)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.ring.len();
        (0..n).map(move |i| (self.ring[i], self.ring[(i + 1) % n]))
    }

    /// Closed-set membership: boundary points count as inside.
    pub fn contains(&self, p: Vec2) -> bool {
        let mut winding = 0i32;
        for (a, b) in self.edges() {
            if point_segment_distance(p, a, b) <= ON_EDGE_EPS {
                return true;
            }
            if a.y <= p.y {
                if b.y > p.y && (b - a).cross(p - a) > 0.0 {
                    winding += 1;
                }
            } else if b.y <= p.y && (b - a).cross(p - a) < 0.0 {
                winding -= 1;
            }
        }
        winding != 0
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        bounding_box(self.ring.iter().copied())
    }
}

pub fn bounding_box(points: impl IntoIterator<Item = Vec2>) -> (Vec2, Vec2) {
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

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn frame_round_trip() {
        let f = Frame::new(Vec2::new(3.0, -1.0), 0.7);
        let p = Vec2::new(-2.5, 4.0);
        let q = f.to_world(f.to_local(p));
        assert!(p.distance(q) < 1e-12);
        let g = Frame::new(Vec2::ZERO, FRAC_PI_2);
        let l = g.to_local(Vec2::new(0.0, 5.0));
        assert!(l.distance(Vec2::new(5.0, 0.0)) < 1e-12);
    }

    #[test]
    fn obb_touching_counts_as_overlap() {
        let a = Obb::new(Vec2::ZERO, 0.0, 4.0, 2.0);
        let b = Obb::new(Vec2::new(4.0, 0.0), 0.0, 4.0, 2.0);
        assert!(a.overlaps(&b));
        let c = Obb::new(Vec2::new(4.01, 0.0), 0.0, 4.0, 2.0);
        assert!(!a.overlaps(&c));
        assert!((a.separation(&c) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn obb_rotated_corner_case() {
        let a = Obb::new(Vec2::ZERO, 0.0, 2.0, 2.0);
        // Diamond whose corner sits 0.1 m inside the square's right edge.
        let d = 2f64.sqrt();
        let b = Obb::new(Vec2::new(1.0 + d - 0.1, 0.0), std::f64::consts::FRAC_PI_4, 2.0, 2.0);
        assert!(a.overlaps(&b));
        let b2 = Obb::new(Vec2::new(1.0 + d + 0.1, 0.0), std::f64::consts::FRAC_PI_4, 2.0, 2.0);
        assert!(!a.overlaps(&b2));
    }

    #[test]
    fn polygon_winding_and_membership() {
        let cw = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(2.0, 0.0),
        ];
        let poly = Polygon::new(cw);
        assert!(poly.area() > 0.0);
        assert!(poly.contains(Vec2::new(1.0, 1.0)));
        assert!(poly.contains(Vec2::new(2.0, 1.0)));
        assert!(poly.contains(Vec2::new(0.0, 0.0)));
        assert!(!poly.contains(Vec2::new(2.0 + 1e-6, 1.0)));
    }
}
