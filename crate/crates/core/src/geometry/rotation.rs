use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Rotation3 as NaRotation, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A 3D rotation stored as a unit quaternion with non-negative scalar part.
///
/// Keeping `w >= 0` picks one of the two quaternions of the double cover, so two
/// equal rotations compare equal component-wise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rotation3 {
    q: UnitQuaternion<f64>,
}

/// Which representation [`Rotation3::convert`] should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReprKind {
    AxisAngle,
    Matrix,
    Quaternion,
}

/// A rotation expressed in one concrete representation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RotationRepr {
    /// Rotation vector: unit axis scaled by the angle in radians.
    AxisAngle(Vector3<f64>),
    Matrix(Matrix3<f64>),
    /// `(w, x, y, z)`.
    Quaternion([f64; 4]),
}

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self { q: UnitQuaternion::identity() }
    }

    fn canonical(q: UnitQuaternion<f64>) -> Self {
        if q.w < 0.0 {
            Self { q: UnitQuaternion::new_unchecked(-q.into_inner()) }
        } else {
            Self { q }
        }
    }

    /// Builds a rotation from `(w, x, y, z)`; the input is normalized.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::canonical(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self::canonical(q)
    }

    /// Rodrigues map from a rotation vector (radians).
    pub fn from_axis_angle(v: &Vector3<f64>) -> Self {
        let angle = v.norm();
        let half = 0.5 * angle;
        // sin(angle/2)/angle, with a series near zero
        let k = if angle < 1e-4 { 0.5 - angle * angle / 48.0 } else { half.sin() / angle };
        let q = Quaternion::new(half.cos(), k * v.x, k * v.y, k * v.z);
        Self::canonical(UnitQuaternion::new_normalize(q))
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn about_axis(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_axis_angle(&(axis.normalize() * angle))
    }

    /// Builds a rotation from an orthonormal matrix with determinant +1.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = NaRotation::from_matrix_unchecked(*m);
        Self::canonical(UnitQuaternion::from_rotation_matrix(&r))
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    /// `(w, x, y, z)` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        [self.q.w, self.q.i, self.q.j, self.q.k]
    }

    /// Rotation vector with angle in `[0, pi]`.
    ///
    /// At exactly `pi` both `axis * pi` and `-axis * pi` describe the rotation;
    /// the one derived from the stored quaternion's vector part is returned.
    pub fn axis_angle(&self) -> Vector3<f64> {
        let v = self.q.imag();
        let n = v.norm();
        if n == 0.0 {
            return Vector3::zeros();
        }
        let angle = 2.0 * n.atan2(self.q.w);
        v * (angle / n)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.q.imag().norm().atan2(self.q.w.abs())
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.q.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.transform_vector(v)
    }

    pub fn convert(&self, target: ReprKind) -> RotationRepr {
        match target {
            ReprKind::AxisAngle => RotationRepr::AxisAngle(self.axis_angle()),
            ReprKind::Matrix => RotationRepr::Matrix(self.matrix()),
            ReprKind::Quaternion => RotationRepr::Quaternion(self.quaternion()),
        }
    }

    /// Shortest-arc spherical interpolation; `t = 0` gives `self`, `t = 1` gives `other`.
    pub fn slerp(&self, other: &Rotation3, t: f64) -> Self {
        let a = self.q.into_inner();
        let mut b = other.q.into_inner();
        let mut dot = a.dot(&b);
        if dot < 0.0 {
            b = -b;
            dot = -dot;
        }
        let q = if dot > 1.0 - 1e-12 {
            a.lerp(&b, t)
        } else {
            let omega = dot.min(1.0).acos();
            let s = omega.sin();
            a * (((1.0 - t) * omega).sin() / s) + b * ((t * omega).sin() / s)
        };
        Self::canonical(UnitQuaternion::new_normalize(q))
    }
}

impl From<[f64; 4]> for Rotation3 {
    fn from(q: [f64; 4]) -> Self {
        Self::from_quaternion(q[0], q[1], q[2], q[3])
    }
}

impl From<Rotation3> for [f64; 4] {
    fn from(r: Rotation3) -> Self {
        r.quaternion()
    }
}

impl From<RotationRepr> for Rotation3 {
    fn from(r: RotationRepr) -> Self {
        match r {
            RotationRepr::AxisAngle(v) => Self::from_axis_angle(&v),
            RotationRepr::Matrix(m) => Self::from_matrix(&m),
            RotationRepr::Quaternion([w, x, y, z]) => Self::from_quaternion(w, x, y, z),
        }
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3::canonical(self.q * rhs.q)
    }
}

impl Mul<Vector3<f64>> for Rotation3 {
    type Output = Vector3<f64>;

    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.rotate(&rhs)
    }
}

/// Angle in `[0, pi]` of the relative rotation `a^-1 b`.
pub fn geodesic_angle(a: &Rotation3, b: &Rotation3) -> f64 {
    // |<qa, qb>| = cos(theta/2); atan2 form keeps precision near zero.
    let qa = a.q.into_inner();
    let qb = b.q.into_inner();
    let rel = qa.conjugate() * qb;
    let angle = 2.0 * rel.imag().norm().atan2(rel.w.abs());
    angle.min(PI)
}

/// Skew-symmetric cross-product matrix `[v]x`.
/// The axis-angle vector of the same rotation as `r` (one of its `2 pi` aliases
/// along the axis) that lies closest to `prev`; keeps sampled sequences continuous.
pub fn nearest_axis_angle(prev: &Vector3<f64>, r: Vector3<f64>) -> Vector3<f64> {
    let angle = r.norm();
    if angle < 1e-9 {
        return r;
    }
    let axis = r / angle;
    [-1.0, 0.0, 1.0]
        .iter()
        .map(|k| axis * (angle + k * std::f64::consts::TAU))
        .min_by(|a, b| (a - prev).norm().total_cmp(&(b - prev).norm()))
        .expect("three candidates")
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of the exponential map on SO(3):
/// `exp(v + d) ~= exp(v) exp(J_r(v) d)`.
pub fn right_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let angle = v.norm();
    let k = skew(v);
    let (a, b) = if angle < 1e-4 {
        let a2 = angle * angle;
        (0.5 - a2 / 24.0, 1.0 / 6.0 - a2 / 120.0)
    } else {
        let a2 = angle * angle;
        ((1.0 - angle.cos()) / a2, (angle - angle.sin()) / (a2 * angle))
    };
    Matrix3::identity() - k * a + k * k * b
}
