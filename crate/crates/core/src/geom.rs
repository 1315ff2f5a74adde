//! Planar points, vectors, and unit directions.
//!
//! All geometry is 2D with coordinates in meters. Azimuths are measured
//! counter-clockwise from the +x axis, in radians.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two unit vectors closer than this in norm deviation count as unit.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// A position in the plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Self { x: v[0], y: v[1] }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Sub for Point2 {
    type Output = Vec2;
    fn sub(self, rhs: Point2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Add<Vec2> for Point2 {
    type Output = Point2;
    fn add(self, rhs: Vec2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

/// A displacement in the plane, meters (or dimensionless when used as a
/// direction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, rhs: Vec2) -> f64 {
        self.x * rhs.x + self.y * rhs.y
    }

    /// Signed area of the parallelogram spanned by `self` and `rhs`.
    pub fn cross(self, rhs: Vec2) -> f64 {
        self.x * rhs.y - self.y * rhs.x
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A direction with norm within [`UNIT_NORM_TOL`] of one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec2(Vec2);

impl UnitVec2 {
    /// Direction at azimuth `theta` radians from the +x axis.
    pub fn from_angle(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::NonFinite("direction angle"));
        }
        Ok(Self(Vec2::new(theta.cos(), theta.sin())))
    }

    /// Normalizes `v`; fails on near-zero or non-finite input.
    pub fn try_from_vec(v: Vec2) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::NonFinite("direction vector"));
        }
        let n = v.norm();
        if n < 1e-12 {
            return Err(Error::InvalidParameter(
                "cannot normalize a near-zero vector".into(),
            ));
        }
        Ok(Self(v * (1.0 / n)))
    }

    pub fn as_vec(self) -> Vec2 {
        self.0
    }

    pub fn x(self) -> f64 {
        self.0.x
    }

    pub fn y(self) -> f64 {
        self.0.y
    }

    /// Azimuth in (-pi, pi], radians.
    pub fn angle(self) -> f64 {
        self.0.y.atan2(self.0.x)
    }
}

/// Intersection of the lines `p + t*dp` and `q + s*dq`.
///
/// Returns `(t, s)` unchecked; callers apply their own range windows. `None`
/// when the lines are parallel within a relative tolerance.
pub fn line_params(p: Point2, dp: Vec2, q: Point2, dq: Vec2) -> Option<(f64, f64)> {
    let denom = dp.cross(dq);
    if denom.abs() <= 1e-12 * dp.norm() * dq.norm() {
        return None;
    }
    let w = q - p;
    let t = w.cross(dq) / denom;
    let s = w.cross(dp) / denom;
    Some((t, s))
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point2,
    pub max: Point2,
}

impl Aabb {
    /// Box containing no points (min above max); growing it with points fixes
    /// it up.
    pub fn empty() -> Self {
        Self {
            min: Point2::new(f64::INFINITY, f64::INFINITY),
            max: Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn include(&mut self, p: Point2) {
        self.min.x = self.min.x.min(p.x);
        self.min.y = self.min.y.min(p.y);
        self.max.x = self.max.x.max(p.x);
        self.max.y = self.max.y.max(p.y);
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}
