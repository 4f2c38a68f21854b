//! Rigid-body transform algebra.
//!
//! A [`Pose`] maps coordinates expressed in a child frame into its parent
//! frame: `p_parent = rotation * p_child + translation`. Composition follows
//! the usual frame-chaining convention, so `T_a_b.compose(&T_b_c) == T_a_c`.

mod shapes;
mod tree;

pub use shapes::{Primitive, Ray, Shape};
pub use tree::{Edge, GeometryError, TransformTree};

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Rigid transform: unit quaternion rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Builds a pose from a rotation matrix that is orthonormal up to
    /// round-off.
    pub fn from_rotation_matrix(m: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*m);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// `self ∘ other`: applies `other` first, then `self`. The rotation is
    /// renormalized so long chains do not drift from unit norm.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.rotation.quaternion() * other.rotation.quaternion();
        Pose {
            rotation: UnitQuaternion::new_normalize(q),
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Homogeneous 4×4 matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Angle in radians of the relative rotation between two poses, in [0, π].
    /// Rotation angle between the two orientations, accurate down to
    /// machine precision (no `acos`).
    pub fn angle_to(&self, other: &Pose) -> f64 {
        let q = self.rotation.inverse() * other.rotation;
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// `|q| − 1`, the drift of the stored quaternion from unit norm.
    pub fn norm_error(&self) -> f64 {
        (self.rotation.quaternion().norm() - 1.0).abs()
    }

    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.distance_to(other) <= tol && self.angle_to(other) <= tol
    }

    /// Axis-angle vector (axis scaled by angle) of the rotation.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.rotation.scaled_axis()
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Wire representation: `{"rotation": [w, x, y, z], "translation": [x, y, z]}`.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        PoseRepr {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        let [w, x, y, z] = repr.rotation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(serde::de::Error::custom(format!(
                "rotation quaternion must have unit norm, got {norm}"
            )));
        }
        if repr.translation.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom("translation must be finite"));
        }
        Ok(Pose::new(
            UnitQuaternion::new_normalize(q),
            Vector3::from(repr.translation),
        ))
    }
}

/// Wraps an angle into (−π, π].
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

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
