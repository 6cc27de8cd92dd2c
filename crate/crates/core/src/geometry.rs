//! Planar geometry: arc-length parameterized paths, poses and oriented boxes.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consecutive waypoints closer than this are merged.
pub const DUP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
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

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Rotate counterclockwise by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
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

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Polyline with cumulative arc length. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    waypoints: Vec<Vec2>,
    arclength: Vec<f64>,
}

/// Build a path, dropping consecutive points closer than [`DUP_EPS`].
pub fn build_path(points: &[Vec2]) -> Result<Path> {
    let mut waypoints: Vec<Vec2> = Vec::with_capacity(points.len());
    let mut arclength = Vec::with_capacity(points.len());
    for &p in points {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::DegeneratePath);
        }
        match waypoints.last() {
            None => {
                waypoints.push(p);
                arclength.push(0.0);
            }
            Some(&last) => {
                let d = last.dist(p);
                if d >= DUP_EPS {
                    let s = arclength[arclength.len() - 1] + d;
                    waypoints.push(p);
                    arclength.push(s);
                }
            }
        }
    }
    if waypoints.len() < 2 {
        return Err(Error::DegeneratePath);
    }
    Ok(Path { waypoints, arclength })
}

impl Path {
    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn arclength(&self) -> &[f64] {
        &self.arclength
    }

    pub fn length(&self) -> f64 {
        self.arclength[self.arclength.len() - 1]
    }

    fn segment_heading(&self, i: usize) -> f64 {
        (self.waypoints[i + 1] - self.waypoints[i]).angle()
    }

    /// Index of the segment containing `s`; waypoints belong to the following segment.
    fn segment_index(&self, s: f64) -> usize {
        let n = self.waypoints.len();
        // first index with arclength > s, minus one
        let idx = self.arclength.partition_point(|&a| a <= s);
        idx.saturating_sub(1).min(n - 2)
    }

    /// Pose at arc length `s`, clamped to `[0, length]`.
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_index(s);
        let a = self.waypoints[i];
        let b = self.waypoints[i + 1];
        let seg = self.arclength[i + 1] - self.arclength[i];
        let t = (s - self.arclength[i]) / seg;
        let p = if t == 0.0 { a } else { a + (b - a) * t };
        Pose::new(p.x, p.y, self.segment_heading(i))
    }

    /// Tangent heading at `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        wrap_angle(self.segment_heading(self.segment_index(s)))
    }

    /// Closest point on the polyline: `(s, unsigned lateral distance)`.
    /// Ties are broken toward the smaller `s`.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best_s = 0.0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.waypoints.len() - 1 {
            let a = self.waypoints[i];
            let b = self.waypoints[i + 1];
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
            let q = a + ab * t;
            let d = p.dist(q);
            if d < best_d {
                best_d = d;
                best_s = self.arclength[i] + t * (self.arclength[i + 1] - self.arclength[i]);
            }
        }
        (best_s, best_d)
    }
}

pub fn pose_at(path: &Path, s: f64) -> Pose {
    path.pose_at(s)
}

pub fn project_to_path(path: &Path, p: Vec2) -> (f64, f64) {
    path.project(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    /// Boxes are stored with `length >= width`; the long axis follows the heading
    /// unless the caller passed a box that is wider than long, in which case the
    /// axes are swapped and the heading rotated a quarter turn.
    pub fn new(center: Pose, length: f64, width: f64) -> Self {
        if width > length {
            let c = Pose::new(center.x, center.y, center.heading + PI / 2.0);
            Self {
                center: c,
                length: width,
                width: length,
            }
        } else {
            Self { center, length, width }
        }
    }

    /// Box grown by `margin` on every side.
    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            center: self.center,
            length: self.length + 2.0 * margin,
            width: self.width + 2.0 * margin,
        }
    }

    fn axes(&self) -> (Vec2, Vec2) {
        let u = Vec2::from_angle(self.center.heading);
        (u, Vec2::new(-u.y, u.x))
    }

    /// Corners in counterclockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let c = self.center.position();
        let (u, v) = self.axes();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        [c + u * hl + v * hw, c - u * hl + v * hw, c - u * hl - v * hw, c + u * hl - v * hw]
    }

    /// True if `p` lies inside or on the boundary.
    pub fn contains(&self, p: Vec2) -> bool {
        let d = p - self.center.position();
        let (u, v) = self.axes();
        d.dot(u).abs() <= self.length / 2.0 && d.dot(v).abs() <= self.width / 2.0
    }

    /// Largest separation gap over the four candidate axes. Non-positive means overlap.
    pub fn separation(&self, other: &OrientedBox) -> f64 {
        let (au, av) = self.axes();
        let (bu, bv) = other.axes();
        let d = other.center.position() - self.center.position();
        let mut best = f64::NEG_INFINITY;
        for axis in [au, av, bu, bv] {
            let ra = self.length / 2.0 * au.dot(axis).abs() + self.width / 2.0 * av.dot(axis).abs();
            let rb = other.length / 2.0 * bu.dot(axis).abs() + other.width / 2.0 * bv.dot(axis).abs();
            let gap = d.dot(axis).abs() - ra - rb;
            best = best.max(gap);
        }
        best
    }
}

/// Separating-axis test; touching boxes count as intersecting.
pub fn boxes_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    a.separation(b) <= 0.0
}
