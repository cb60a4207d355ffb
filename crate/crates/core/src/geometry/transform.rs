use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use super::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};

/// Rigid pose: rotation from intrinsic Z-Y-X Euler angles followed by a
/// translation, `x -> R(angles) x + translation`.
///
/// `angles` holds the rotations about x, y and z (radians); the matrix is
/// `Rz(angles.z) * Ry(angles.y) * Rx(angles.x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub translation: [f64; 3],
    pub angles: [f64; 3],
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            translation: [0.0; 3],
            angles: [0.0; 3],
        }
    }

    pub fn new(translation: [f64; 3], angles: [f64; 3]) -> Self {
        RigidTransform {
            translation,
            angles,
        }
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        RigidTransform::new(translation, [0.0; 3])
    }

    /// Recover Euler angles from a rotation matrix. The matrix is assumed orthonormal.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vec3) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        let (roll, pitch, yaw) = rot.euler_angles();
        RigidTransform::new(translation.into(), [roll, pitch, yaw])
    }

    pub fn is_finite(&self) -> bool {
        self.translation
            .iter()
            .chain(&self.angles)
            .all(|v| v.is_finite())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let [rx, ry, rz] = self.angles;
        Rotation3::from_euler_angles(rx, ry, rz).into_inner()
    }

    pub fn translation_vec(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation_vec()
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation().transpose();
        RigidTransform::from_matrix(&rt, -(rt * self.translation_vec()))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let r = self.rotation() * other.rotation();
        let t = self.rotation() * other.translation_vec() + self.translation_vec();
        RigidTransform::from_matrix(&r, t)
    }
}

/// Apply a rigid pose to every point, preserving order.
pub fn apply_rigid(cloud: &PointCloud, xf: &RigidTransform) -> Result<PointCloud> {
    if !xf.is_finite() {
        return Err(Error::invalid(format!(
            "rigid transform has non-finite parameters: {xf:?}"
        )));
    }
    let r = xf.rotation();
    let t = xf.translation_vec();
    Ok(cloud.map(|p| r * p + t))
}
