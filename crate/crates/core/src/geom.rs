//! Points, cubic Bézier segments and the polygon helpers shared by the font
//! reader, the rasterizer and the region selector.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        self + (other - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// One cubic Bézier segment, `p0` and `p3` on the curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicSegment {
    pub p0: Point,
    pub p1: Point,
    pub p2: Point,
    pub p3: Point,
}

impl CubicSegment {
    pub const fn new(p0: Point, p1: Point, p2: Point, p3: Point) -> Self {
        Self { p0, p1, p2, p3 }
    }

    /// Straight segment with control points at the thirds.
    pub fn line(a: Point, b: Point) -> Self {
        Self::new(a, a + (b - a) * (1.0 / 3.0), a + (b - a) * (2.0 / 3.0), b)
    }

    pub fn points(&self) -> [Point; 4] {
        [self.p0, self.p1, self.p2, self.p3]
    }

    /// De Casteljau evaluation: exact at both ends, and a segment whose
    /// control points coincide evaluates to that point for every `t`.
    pub fn eval(&self, t: f64) -> Point {
        if t == 0.0 {
            return self.p0;
        }
        if t == 1.0 {
            return self.p3;
        }
        let a = self.p0.lerp(self.p1, t);
        let b = self.p1.lerp(self.p2, t);
        let c = self.p2.lerp(self.p3, t);
        let d = a.lerp(b, t);
        let e = b.lerp(c, t);
        d.lerp(e, t)
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.p3, self.p2, self.p1, self.p0)
    }

    pub fn is_finite(&self) -> bool {
        self.points().iter().all(|p| p.is_finite())
    }

    pub fn translated(&self, d: Point) -> Self {
        Self::new(self.p0 + d, self.p1 + d, self.p2 + d, self.p3 + d)
    }
}

/// Cubic Bernstein weights at `t`. Exact at `t = 0` and `t = 1`.
#[inline]
pub fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

/// Samples of one segment at `t = k / subdiv`, `k = 0..=subdiv`.
pub fn sample_segment(seg: &CubicSegment, subdiv: usize) -> Vec<Point> {
    (0..=subdiv).map(|k| seg.eval(k as f64 / subdiv as f64)).collect()
}

/// Closed polygon through the samples of a contour (the duplicated joint
/// between consecutive segments is emitted once).
pub fn flatten_contour(segments: &[CubicSegment], subdiv: usize) -> Vec<Point> {
    let mut poly = Vec::with_capacity(segments.len() * subdiv);
    for seg in segments {
        let samples = sample_segment(seg, subdiv);
        poly.extend_from_slice(&samples[..subdiv]);
    }
    poly
}

/// Shoelace area; positive when the vertices turn from +x towards +y.
pub fn signed_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Even-odd containment with the half-open crossing rule.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernstein_partition_of_unity() {
        for k in 0..=20 {
            let w = bernstein(k as f64 / 20.0);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(bernstein(0.0), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(bernstein(1.0), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn unit_square_area_and_containment() {
        let sq = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        assert_eq!(signed_area(&sq), 1.0);
        let rev: Vec<_> = sq.iter().rev().copied().collect();
        assert_eq!(signed_area(&rev), -1.0);
        assert!(point_in_polygon(Point::new(0.5, 0.5), &sq));
        assert!(!point_in_polygon(Point::new(1.5, 0.5), &sq));
    }

    #[test]
    fn line_segment_is_straight() {
        let seg = CubicSegment::line(Point::new(0.0, 0.0), Point::new(3.0, 6.0));
        let mid = seg.eval(0.5);
        assert!((mid.x - 1.5).abs() < 1e-15 && (mid.y - 3.0).abs() < 1e-15);
    }
}
