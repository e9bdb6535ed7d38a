//! Planar poses, 3D points, end-effector poses and seeded randomness shared by
//! every other module.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

const TWO_PI: f64 = 2.0 * PI;

/// Wraps an angle into `(-pi, pi]`. The boundary is assigned to `+pi`.
pub fn normalize_angle(a: f64) -> Result<f64, GeometryError> {
    if !a.is_finite() {
        return Err(GeometryError::NonFinite("angle"));
    }
    Ok(wrap(a))
}

/// Infallible variant for values already known to be finite.
pub fn wrap(a: f64) -> f64 {
    let mut r = a - TWO_PI * ((a + PI) / TWO_PI).floor();
    // floor() places r in [-pi, pi); rounding can leave it a hair above -pi.
    if r <= -PI + 1e-12 {
        r += TWO_PI;
    }
    if r > PI {
        r = PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn try_new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        if x.is_finite() && y.is_finite() && z.is_finite() {
            Ok(Self { x, y, z })
        } else {
            Err(GeometryError::NonFinite("point"))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }

    pub fn planar_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn offset(&self, dx: f64, dy: f64, dz: f64) -> Point3 {
        Point3::new(self.x + dx, self.y + dy, self.z + dz)
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.x, self.y, self.z)
    }
}

/// Planar chassis pose. `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl BasePose {
    pub const IDENTITY: BasePose = BasePose { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap(theta) }
    }

    pub fn try_new(x: f64, y: f64, theta: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(GeometryError::NonFinite("base pose"));
        }
        Ok(Self { x, y, theta: normalize_angle(theta)? })
    }

    pub fn inverse(&self) -> BasePose {
        let (s, c) = self.theta.sin_cos();
        BasePose::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &BasePose) -> BasePose {
        let (s, c) = self.theta.sin_cos();
        BasePose::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn heading(&self) -> (f64, f64) {
        (self.theta.cos(), self.theta.sin())
    }

    pub fn planar_distance_to(&self, p: &Point3) -> f64 {
        (self.x - p.x).hypot(self.y - p.y)
    }
}

/// Rotates `p_local` about z by the pose heading, then translates by `(x, y)`.
pub fn se2_transform(pose: &BasePose, p_local: &Point3) -> Point3 {
    let (s, c) = pose.theta.sin_cos();
    Point3::new(
        pose.x + c * p_local.x - s * p_local.y,
        pose.y + s * p_local.x + c * p_local.y,
        p_local.z,
    )
}

/// World point expressed in the frame of `pose`.
pub fn se2_inverse_transform(pose: &BasePose, p_world: &Point3) -> Point3 {
    let (s, c) = pose.theta.sin_cos();
    let dx = p_world.x - pose.x;
    let dy = p_world.y - pose.y;
    Point3::new(c * dx + s * dy, -s * dx + c * dy, p_world.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    World,
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn empty(frame: Frame) -> Self {
        Self { points: Vec::new(), frame }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let n = self.points.len() as f64;
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.to_vector());
        Some(Point3::from_vector(&(sum / n)))
    }

    /// Re-expresses a world cloud in the frame of `pose`.
    pub fn to_base(&self, pose: &BasePose) -> PointCloud {
        match self.frame {
            Frame::Base => self.clone(),
            Frame::World => PointCloud {
                points: self.points.iter().map(|p| se2_inverse_transform(pose, p)).collect(),
                frame: Frame::Base,
            },
        }
    }

    pub fn transformed(&self, motion: &BasePose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| se2_transform(motion, p)).collect(),
            frame: self.frame,
        }
    }
}

/// Tool pose for the simulated arm: position, unit approach axis and roll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EEPose {
    pub position: Point3,
    approach: [f64; 3],
    pub roll: f64,
}

impl EEPose {
    pub fn new(position: Point3, approach_dir: Vector3<f64>, roll: f64) -> Result<Self, GeometryError> {
        if !position.is_finite() || !roll.is_finite() {
            return Err(GeometryError::NonFinite("end-effector pose"));
        }
        let n = approach_dir.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeometryError::ZeroApproach);
        }
        let a = approach_dir / n;
        Ok(Self { position, approach: [a.x, a.y, a.z], roll: wrap(roll) })
    }

    /// Approach pointing along planar heading `azimuth`, tilted `tilt` radians
    /// below the horizontal.
    pub fn tilted(position: Point3, azimuth: f64, tilt: f64) -> Self {
        let (st, ct) = tilt.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        Self {
            position,
            approach: [ct * ca, ct * sa, -st],
            roll: 0.0,
        }
    }

    pub fn approach_dir(&self) -> Vector3<f64> {
        Vector3::new(self.approach[0], self.approach[1], self.approach[2])
    }

    /// Normalized planar projection of the approach axis, if it has one.
    pub fn planar_approach(&self) -> Option<(f64, f64)> {
        let (x, y) = (self.approach[0], self.approach[1]);
        let n = x.hypot(y);
        (n > 1e-9).then(|| (x / n, y / n))
    }
}

/// Root of all randomness in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for a named sub-stream.
    pub fn derive(self, stream: u64) -> RngSeed {
        RngSeed(splitmix64(self.0 ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Axis-aligned planar box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Box2 {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x: min_x.min(max_x),
            min_y: min_y.min(max_y),
            max_x: max_x.max(min_x),
            max_y: max_y.max(min_y),
        }
    }

    pub fn centered(cx: f64, cy: f64, half_x: f64, half_y: f64) -> Self {
        Self::new(cx - half_x, cy - half_y, cx + half_x, cy + half_y)
    }

    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x).max(0.0) * (self.max_y - self.min_y).max(0.0)
    }

    pub fn intersection_area(&self, other: &Box2) -> f64 {
        let w = self.max_x.min(other.max_x) - self.min_x.max(other.min_x);
        let h = self.max_y.min(other.max_y) - self.min_y.max(other.min_y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    /// Planar bounding box of a cloud; `None` for an empty cloud.
    pub fn bounding(points: &[Point3]) -> Option<Box2> {
        let first = points.first()?;
        let mut b = Box2 { min_x: first.x, min_y: first.y, max_x: first.x, max_y: first.y };
        for p in &points[1..] {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        Some(b)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Box2 {
        Box2 {
            min_x: self.min_x + dx,
            min_y: self.min_y + dy,
            max_x: self.max_x + dx,
            max_y: self.max_y + dy,
        }
    }
}
