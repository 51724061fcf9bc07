//! Rotation and rigid-transform helpers shared by every module.

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle the Rodrigues coefficients switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-6;

/// Skew-symmetric cross-product matrix of `v`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix from an axis-angle vector (direction = axis, norm = angle).
pub fn rotation_from_axis_angle(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(w);
    Mat3::identity() + k * a + k * k * b
}

/// Rotation about a unit `axis` by `angle` radians.
pub fn rotation_about(axis: &Vec3, angle: f64) -> Mat3 {
    rotation_from_axis_angle(&(axis * angle))
}

/// Axis-angle vector of a rotation matrix; the inverse of [`rotation_from_axis_angle`]
/// for angles in `[0, π]`.
pub fn axis_angle_from_rotation(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < SMALL_ANGLE {
        return vee * 0.5 * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta < 1e-4 {
        // Near π the antisymmetric part vanishes; recover the axis from R + I.
        let q = UnitQuaternion::from_matrix(r);
        return q.scaled_axis();
    }
    vee * (theta / (2.0 * theta.sin()))
}

/// Angle in radians of the relative rotation between two rotation matrices.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let rel = a.transpose() * b;
    ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn project_to_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Left Jacobian of SO(3): `exp(r + δ) ≈ exp(J(r) δ) exp(r)` for small `δ`.
pub fn left_jacobian_so3(r: &Vec3) -> Mat3 {
    let theta2 = r.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-4 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let k = skew(r);
    Mat3::identity() + k * a + k * k * b
}

/// A proper rigid motion `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    /// Translation followed by axis-angle rotation, the layout of a pose's root part.
    pub fn from_translation_axis_angle(t: Vec3, axis_angle: Vec3) -> Self {
        Self { rotation: rotation_from_axis_angle(&axis_angle), translation: t }
    }

    pub fn from_quaternion(t: Vec3, q: &UnitQuaternion<f64>) -> Self {
        Self { rotation: *q.to_rotation_matrix().matrix(), translation: t }
    }

    pub fn axis_angle(&self) -> Vec3 {
        axis_angle_from_rotation(&self.rotation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Deviation from orthonormality `‖RᵀR − I‖_max` together with `|det R − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Mat3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        self.orthonormality_error() <= tol
    }

    /// Rotation angle (radians) and translation distance separating two transforms.
    pub fn distance_to(&self, other: &RigidTransform) -> (f64, f64) {
        (
            rotation_angle_between(&self.rotation, &other.rotation),
            (self.translation - other.translation).norm(),
        )
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4 entries.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Builds a transform from 16 row-major entries; the bottom row must be `0 0 0 1`.
    pub fn from_row_major(v: &[f64]) -> Option<RigidTransform> {
        if v.len() != 16 {
            return None;
        }
        let bottom = [v[12], v[13], v[14], v[15]];
        if bottom.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > 1e-9) {
            return None;
        }
        let rotation = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Some(RigidTransform { rotation, translation: Vec3::new(v[3], v[7], v[11]) })
    }
}
