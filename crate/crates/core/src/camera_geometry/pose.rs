use nalgebra::{Isometry3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform stored as an axis-angle rotation (radians, angle in
/// `[0, π]`) and a translation (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6D {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6D {
    pub fn identity() -> Self {
        Self {
            rotation: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: &Rotation3<f64>, translation: &Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::from_rotation_matrix(rotation).scaled_axis().into(),
            translation: (*translation).into(),
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            rotation: iso.rotation.scaled_axis().into(),
            translation: iso.translation.vector.into(),
        }
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(Vector3::from(self.rotation))
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.translation_vector()),
            UnitQuaternion::from_scaled_axis(Vector3::from(self.rotation)),
        )
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        self.to_isometry().to_homogeneous()
    }

    pub fn inverse(&self) -> Self {
        Self::from_isometry(&self.to_isometry().inverse())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose6D) -> Self {
        Self::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation_vector()
    }

    /// Geodesic angle between the two rotations, radians.
    pub fn rotation_distance(&self, other: &Pose6D) -> f64 {
        let a = self.rotation_matrix();
        let b = other.rotation_matrix();
        rotation_angle(&(a.inverse() * b))
    }

    pub fn translation_distance(&self, other: &Pose6D) -> f64 {
        (self.translation_vector() - other.translation_vector()).norm()
    }

    /// Origin of the source frame expressed in the target frame's inverse,
    /// i.e. the camera centre when `self` maps world → camera.
    pub fn inverse_origin(&self) -> Vector3<f64> {
        (self.to_isometry().inverse() * Point3::origin()).coords
    }
}

/// Rotation angle of `r` in [0, π], accurate for small angles (unlike an
/// arccos of the trace).
pub fn rotation_angle(r: &Rotation3<f64>) -> f64 {
    let m = r.matrix();
    let sin2 = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    sin2.atan2(m.trace() - 1.0)
}
