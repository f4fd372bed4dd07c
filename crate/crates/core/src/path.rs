//! Arc-length parameterized polylines used for lane following and anchors.

use crate::geometry::{point_segment_distance, Vec2};
use crate::kinematics::normalize_angle;

#[derive(Clone, Debug, PartialEq)]
pub struct ArcPath {
    points: Vec<Vec2>,
    cum: Vec<f64>,
}

impl ArcPath {
    /// Panics on fewer than two points.
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "a path needs at least two points");
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cum.push(acc);
        }
        ArcPath { points, cum }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.cum[self.cum.len() - 1]
    }

    fn segment(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Point at arc length `s`, extrapolating linearly past either end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.cum[i + 1] - self.cum[i];
        a + (b - a) * ((s - self.cum[i]) / len)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment(s);
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Arc length of the closest point and the distance to it.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let d = point_segment_distance(p, a, b);
            if d < best.1 {
                let ab = b - a;
                let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
                best = (self.cum[i] + t * ab.norm(), d);
            }
        }
        best
    }

    /// Largest absolute curvature over vertices within `[s0, s1]`.
    pub fn max_curvature(&self, s0: f64, s1: f64) -> f64 {
        let mut k: f64 = 0.0;
        for i in 1..self.points.len() - 1 {
            if self.cum[i] < s0 || self.cum[i] > s1 {
                continue;
            }
            let h0 = (self.points[i] - self.points[i - 1]).angle();
            let h1 = (self.points[i + 1] - self.points[i]).angle();
            let ds = 0.5 * (self.cum[i + 1] - self.cum[i - 1]);
            k = k.max(normalize_angle(h1 - h0).abs() / ds);
        }
        k
    }
}
