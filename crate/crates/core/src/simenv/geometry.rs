//! Planar primitives and ray intersection.

use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle, serialized as `[min_x, min_y, max_x, max_y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(a: [f64; 4]) -> Self {
        Rect { min_x: a[0], min_y: a[1], max_x: a[2], max_y: a[3] }
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.min_x, r.min_y, r.max_x, r.max_y]
    }
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect { min_x, min_y, max_x, max_y }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn is_well_formed(&self) -> bool {
        [self.min_x, self.min_y, self.max_x, self.max_y].iter().all(|v| v.is_finite())
            && self.max_x > self.min_x
            && self.max_y > self.min_y
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min_x && p[0] <= self.max_x && p[1] >= self.min_y && p[1] <= self.max_y
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.min_x >= self.min_x && other.max_x <= self.max_x && other.min_y >= self.min_y && other.max_y <= self.max_y
    }

    pub fn shrink(&self, by: f64) -> Rect {
        Rect::new(self.min_x + by, self.min_y + by, self.max_x - by, self.max_y - by)
    }

    pub fn distance_to_point(&self, p: [f64; 2]) -> f64 {
        let dx = (self.min_x - p[0]).max(0.0).max(p[0] - self.max_x);
        let dy = (self.min_y - p[1]).max(0.0).max(p[1] - self.max_y);
        dx.hypot(dy)
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.min_x, self.min_y],
            [self.max_x, self.min_y],
            [self.max_x, self.max_y],
            [self.min_x, self.max_y],
        ]
    }

    pub fn edges(&self) -> [Segment; 4] {
        let c = self.corners();
        [
            Segment::new(c[0], c[1]),
            Segment::new(c[1], c[2]),
            Segment::new(c[2], c[3]),
            Segment::new(c[3], c[0]),
        ]
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min_x + self.max_x) / 2.0, (self.min_y + self.max_y) / 2.0]
    }
}

/// Line segment, serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl From<[f64; 4]> for Segment {
    fn from(s: [f64; 4]) -> Self {
        Segment { a: [s[0], s[1]], b: [s[2], s[3]] }
    }
}

impl From<Segment> for [f64; 4] {
    fn from(s: Segment) -> Self {
        [s.a[0], s.a[1], s.b[0], s.b[1]]
    }
}

impl Segment {
    pub const fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Segment { a, b }
    }

    pub fn distance_to_point(&self, p: [f64; 2]) -> f64 {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p[0] - self.a[0]) * d[0] + (p[1] - self.a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        };
        (p[0] - self.a[0] - t * d[0]).hypot(p[1] - self.a[1] - t * d[1])
    }

    /// Distance along the unit ray `origin + t * dir` to this segment.
    pub fn ray_hit(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        let e = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let denom = cross(dir, e);
        if denom.abs() < 1e-15 {
            return None;
        }
        let ao = [self.a[0] - origin[0], self.a[1] - origin[1]];
        let t = cross(ao, e) / denom;
        let s = cross(ao, dir) / denom;
        if t >= 0.0 && (0.0..=1.0).contains(&s) {
            Some(t)
        } else {
            None
        }
    }

    pub fn intersects(&self, other: &Segment) -> bool {
        let o1 = orient(self.a, self.b, other.a);
        let o2 = orient(self.a, self.b, other.b);
        let o3 = orient(other.a, other.b, self.a);
        let o4 = orient(other.a, other.b, self.b);
        o1 * o2 <= 0.0 && o3 * o4 <= 0.0
    }

    pub fn distance_to_rect(&self, r: &Rect) -> f64 {
        if r.contains(self.a) || r.contains(self.b) || r.edges().iter().any(|e| e.intersects(self)) {
            return 0.0;
        }
        let from_ends = r.distance_to_point(self.a).min(r.distance_to_point(self.b));
        r.corners()
            .iter()
            .map(|c| self.distance_to_point(*c))
            .fold(from_ends, f64::min)
    }
}

/// Circle, serialized as `[cx, cy, r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl From<[f64; 3]> for Circle {
    fn from(c: [f64; 3]) -> Self {
        Circle { center: [c[0], c[1]], radius: c[2] }
    }
}

impl From<Circle> for [f64; 3] {
    fn from(c: Circle) -> Self {
        [c.center[0], c.center[1], c.radius]
    }
}

impl Circle {
    pub const fn new(center: [f64; 2], radius: f64) -> Self {
        Circle { center, radius }
    }

    /// Signed distance from `p` to the circle boundary (negative inside).
    pub fn surface_distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius
    }

    /// First non-negative hit distance along the unit ray.
    pub fn ray_hit(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        let oc = [origin[0] - self.center[0], origin[1] - self.center[1]];
        let b = oc[0] * dir[0] + oc[1] * dir[1];
        let c = oc[0] * oc[0] + oc[1] * oc[1] - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let near = -b - sq;
        if near >= 0.0 {
            return Some(near);
        }
        let far = -b + sq;
        (far >= 0.0).then_some(far)
    }
}

fn cross(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[1] - u[1] * v[0]
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    cross([b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]])
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let x = a.rem_euclid(TAU);
    if x > PI {
        x - TAU
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn ray_hits() {
        let s = Segment::new([1.0, -1.0], [1.0, 1.0]);
        assert_eq!(s.ray_hit([0.0, 0.0], [1.0, 0.0]), Some(1.0));
        assert_eq!(s.ray_hit([0.0, 0.0], [-1.0, 0.0]), None);
        let c = Circle::new([3.0, 0.0], 1.0);
        assert_eq!(c.ray_hit([0.0, 0.0], [1.0, 0.0]), Some(2.0));
        assert_eq!(c.ray_hit([0.0, 0.0], [0.0, 1.0]), None);
    }

    #[test]
    fn rect_segment_distance() {
        let r = Rect::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(Segment::new([2.0, -1.0], [2.0, 2.0]).distance_to_rect(&r), 1.0);
        assert_eq!(Segment::new([-1.0, 0.5], [2.0, 0.5]).distance_to_rect(&r), 0.0);
        let d = Segment::new([2.0, 3.0], [3.0, 2.0]).distance_to_rect(&r);
        assert!((d - 3.0 / 2f64.sqrt()).abs() < 1e-12);
    }
}
