//! Quaternion and rigid-transform mathematics.
//!
//! Quaternions are Hamilton, scalar-first: `(w, x, y, z)`.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

pub type Quaternion = Vector4<f64>;

/// Rotation matrix of the quaternion `q / |q|`.
pub fn quat_to_matrix(q: &Quaternion) -> Result<Matrix3<f64>> {
    let n = q.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateQuaternion);
    }
    Ok(unit_quat_to_matrix(&(q / n)))
}

fn unit_quat_to_matrix(q: &Quaternion) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
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

/// Vector-Jacobian product of [`quat_to_matrix`]: given `dL/dR`, returns
/// `dL/dq` with respect to the raw (unnormalized) quaternion.
pub fn quat_to_matrix_vjp(q_raw: &Quaternion, grad_r: &Matrix3<f64>) -> Result<Quaternion> {
    let n = q_raw.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateQuaternion);
    }
    let q = q_raw / n;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let g = grad_r;
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let g_unit = Quaternion::new(dw, dx, dy, dz);
    // Chain through q = q_raw / |q_raw|.
    Ok((g_unit - q * q.dot(&g_unit)) / n)
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &Quaternion, b: &Quaternion) -> Quaternion {
    Quaternion::new(
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )
}

/// Unit quaternion of a rotation matrix (Shepperd's method). The sign is
/// chosen so that `w >= 0`.
pub fn matrix_to_quat(r: &Matrix3<f64>) -> Quaternion {
    let tr = r.trace();
    let q = if tr > r[(0, 0)] && tr > r[(1, 1)] && tr > r[(2, 2)] {
        let s = (1.0 + tr).sqrt() * 2.0;
        Quaternion::new(
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        Quaternion::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    };
    let q = q.normalize();
    if q[0] < 0.0 {
        -q
    } else {
        q
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map of so(3): rotation by `|w|` radians about `w / |w|`.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3) at `w`.
pub fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector (axis × angle, angle in [0, π]) of a unit quaternion.
pub fn quat_to_rotation_vector(q: &Quaternion) -> Vector3<f64> {
    let q = if q[0] < 0.0 { -q } else { *q };
    let v = Vector3::new(q[1], q[2], q[3]);
    let s = v.norm();
    if s < 1e-15 {
        return v * 2.0;
    }
    let angle = 2.0 * s.atan2(q[0]);
    v * (angle / s)
}

pub fn rotation_vector_to_quat(w: &Vector3<f64>) -> Quaternion {
    let theta = w.norm();
    if theta < 1e-15 {
        return Quaternion::new(1.0, 0.5 * w.x, 0.5 * w.y, 0.5 * w.z).normalize();
    }
    let axis = w / theta;
    let (s, c) = (0.5 * theta).sin_cos();
    Quaternion::new(c, axis.x * s, axis.y * s, axis.z * s)
}

/// Element of SE(3): `p ↦ R p + t`.
///
/// The rotation matrix is always derived from the stored unit quaternion, so
/// the two representations never drift apart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    quaternion: Quaternion,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            quaternion: Quaternion::new(1.0, 0.0, 0.0, 0.0),
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform from any nonzero quaternion (normalized here).
    pub fn from_quaternion(q: &Quaternion, translation: Vector3<f64>) -> Result<Self> {
        let rotation = quat_to_matrix(q)?;
        Ok(Self {
            quaternion: q.normalize(),
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    pub fn from_rotation_vector(w: &Vector3<f64>, translation: Vector3<f64>) -> Self {
        let q = rotation_vector_to_quat(w);
        Self {
            quaternion: q,
            rotation: unit_quat_to_matrix(&q),
            translation,
        }
    }

    /// Builds a transform from a rotation matrix, checking that it is a
    /// proper rotation within `1e-6`.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(rotation)?;
        let q = matrix_to_quat(rotation);
        Ok(Self {
            quaternion: q,
            rotation: unit_quat_to_matrix(&q),
            translation,
        })
    }

    pub fn quaternion(&self) -> &Quaternion {
        &self.quaternion
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        quat_to_rotation_vector(&self.quaternion)
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    /// Maps points by `R p + t` and normals by `R n`.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud.points().iter().map(|p| self.apply_point(p)).collect();
        let normals = cloud.normals().map(|ns| {
            ns.iter()
                .map(|n| {
                    let m = self.rotation * n;
                    m / m.norm()
                })
                .collect()
        });
        PointCloud::from_parts_unchecked(points, normals)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let q = quat_mul(&self.quaternion, &other.quaternion).normalize();
        Self {
            quaternion: q,
            rotation: unit_quat_to_matrix(&q),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let q = Quaternion::new(
            self.quaternion[0],
            -self.quaternion[1],
            -self.quaternion[2],
            -self.quaternion[3],
        );
        let rotation = unit_quat_to_matrix(&q);
        Self {
            quaternion: q,
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    /// Row-major `[R | t]` as 12 values.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Rotation and translation as plain arrays, the form used by the JSON
    /// sidecars.
    pub fn to_record(&self) -> TransformRecord {
        let r = &self.rotation;
        TransformRecord {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
    }

    pub fn from_record(rec: &TransformRecord) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| rec.rotation[i][j]);
        let t = Vector3::from(rec.translation);
        if !r.iter().chain(t.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        Self::from_matrix(&r, t)
    }
}

/// Row-major serialized transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

/// Checks `RᵀR = I` (Frobenius 1e-6) and `det R = 1` (1e-6).
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).norm();
    if !(ortho <= 1e-6) {
        return Err(Error::InvalidRotation(format!(
            "|RᵀR - I| = {ortho:.3e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidRotation(format!("det R = {det:.6}")));
    }
    Ok(())
}
