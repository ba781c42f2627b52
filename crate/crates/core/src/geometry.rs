//! Rigid-body pose primitives: unit quaternions, timestamped poses and the
//! interpolation helpers used by trajectory playback and calibration merges.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::time::SimTime;

/// Quaternions with a norm at or below this are rejected as degenerate.
pub const MIN_QUATERNION_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {norm:e} is too small to normalize")]
    ZeroQuaternion { norm: f64 },
    #[error("interpolation parameter {t} is outside [0, 1]")]
    OutOfRange { t: f64 },
    #[error("pose position has a non-finite component")]
    NonFinite,
}

/// A rotation stored as a unit quaternion in canonical form.
///
/// Canonical form has `w >= 0`; when `w == 0` the first non-zero vector
/// component is positive. `q` and `-q` therefore always compare equal after
/// construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes a raw `(w, x, y, z)` quaternion.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        quat_normalize([w, x, y, z])
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let norm = axis.norm();
        if norm <= MIN_QUATERNION_NORM || angle == 0.0 {
            return Self::IDENTITY;
        }
        let half = 0.5 * angle;
        let s = half.sin() / norm;
        Self::from_raw_unchecked(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    /// Rotation whose axis-angle vector is `v` (angle = |v|).
    pub fn from_scaled_axis(v: &Vector3<f64>) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &UnitQuaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn inverse(&self) -> UnitQuaternion {
        Self::from_raw_unchecked(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs` (apply `rhs` first, then `self`).
    pub fn mul(&self, rhs: &UnitQuaternion) -> UnitQuaternion {
        let (a, b) = (self, rhs);
        Self::from_raw_unchecked(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = Vector3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Axis-angle vector of this rotation, angle in `[0, pi]`.
    pub fn scaled_axis(&self) -> Vector3<f64> {
        let v = Vector3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < 1e-12 {
            // small-angle limit of 2*atan2(s, w) * v / s
            return 2.0 * v;
        }
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }

    /// Geodesic angle between two rotations, in `[0, pi]`.
    pub fn angle_to(&self, other: &UnitQuaternion) -> f64 {
        let r = self.inverse().mul(other);
        let s = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
        2.0 * s.atan2(r.w)
    }

    fn from_raw_unchecked(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        canonical(w / n, x / n, y / n, z / n)
    }
}

fn canonical(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion {
    let flip = if w != 0.0 {
        w < 0.0
    } else if x != 0.0 {
        x < 0.0
    } else if y != 0.0 {
        y < 0.0
    } else {
        z < 0.0
    };
    // `+ 0.0` turns negative zeros into positive ones so equality is stable.
    if flip {
        UnitQuaternion {
            w: -w + 0.0,
            x: -x + 0.0,
            y: -y + 0.0,
            z: -z + 0.0,
        }
    } else {
        UnitQuaternion {
            w: w + 0.0,
            x: x + 0.0,
            y: y + 0.0,
            z: z + 0.0,
        }
    }
}

/// Normalizes a raw quaternion `[w, x, y, z]` to canonical unit form.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn quat_normalize(q: [f64; 4]) -> Result<UnitQuaternion, GeometryError> {
    let [w, x, y, z] = q;
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    if !(norm > MIN_QUATERNION_NORM) || !norm.is_finite() {
        return Err(GeometryError::ZeroQuaternion { norm });
    }
    Ok(canonical(w / norm, x / norm, y / norm, z / norm))
}

/// Shortest-arc spherical interpolation. Endpoints are returned exactly.
pub fn quat_slerp(
    a: &UnitQuaternion,
    b: &UnitQuaternion,
    t: f64,
) -> Result<UnitQuaternion, GeometryError> {
    check_unit_interval(t)?;
    if t == 0.0 {
        return Ok(*a);
    }
    if t == 1.0 {
        return Ok(*b);
    }
    let mut dot = a.dot(b);
    let sign = if dot < 0.0 {
        dot = -dot;
        -1.0
    } else {
        1.0
    };
    let (wa, wb) = if dot > 0.9995 {
        (1.0 - t, t)
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    let wb = wb * sign;
    Ok(UnitQuaternion::from_raw_unchecked(
        wa * a.w + wb * b.w,
        wa * a.x + wb * b.x,
        wa * a.y + wb * b.y,
        wa * a.z + wb * b.z,
    ))
}

fn check_unit_interval(t: f64) -> Result<(), GeometryError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(GeometryError::OutOfRange { t })
    }
}

/// Where a pose in a virtual space came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoseSource {
    /// Captured by on-device sensors without network transit.
    GroundTruth,
    /// Extrapolated locally by a model.
    Predicted,
    /// A prediction corrected by a ground-truth calibration.
    Calibrated,
}

/// Timestamped rigid-body pose; position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion,
    pub stamp: SimTime,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::from_position(Vector3::zeros(), SimTime::ZERO)
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion, stamp: SimTime) -> Self {
        debug_assert!(position.iter().all(|c| c.is_finite()));
        Pose {
            position,
            orientation,
            stamp,
        }
    }

    pub fn try_new(
        position: Vector3<f64>,
        orientation: UnitQuaternion,
        stamp: SimTime,
    ) -> Result<Self, GeometryError> {
        if position.iter().all(|c| c.is_finite()) {
            Ok(Pose::new(position, orientation, stamp))
        } else {
            Err(GeometryError::NonFinite)
        }
    }

    pub fn from_position(position: Vector3<f64>, stamp: SimTime) -> Self {
        Pose::new(position, UnitQuaternion::IDENTITY, stamp)
    }

    pub fn with_stamp(mut self, stamp: SimTime) -> Self {
        self.stamp = stamp;
        self
    }
}

/// Euclidean distance between the positions of two poses, in meters.
///
/// Orientation is deliberately ignored; use [`UnitQuaternion::angle_to`] for
/// rotational drift.
pub fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    (a.position - b.position).norm()
}

/// Interpolates between two poses: linear position, slerp orientation, and a
/// stamp at the same fraction between the endpoint stamps.
pub fn pose_lerp(a: &Pose, b: &Pose, t: f64) -> Result<Pose, GeometryError> {
    check_unit_interval(t)?;
    let position = a.position * (1.0 - t) + b.position * t;
    let orientation = quat_slerp(&a.orientation, &b.orientation, t)?;
    let (sa, sb) = (a.stamp.as_nanos() as f64, b.stamp.as_nanos() as f64);
    let stamp = if t == 0.0 {
        a.stamp
    } else if t == 1.0 {
        b.stamp
    } else {
        SimTime::from_nanos((sa + t * (sb - sa)).round().max(0.0) as u64)
    };
    Ok(Pose::new(position, orientation, stamp))
}
