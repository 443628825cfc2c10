use nalgebra::{Matrix3, Matrix3x4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose6D};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < f64::from(self.width)) {
            return Err(GeometryError::InvalidCamera(format!(
                "cx {} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < f64::from(self.height)) {
            return Err(GeometryError::InvalidCamera(format!(
                "cy {} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<[f64; 2], GeometryError> {
        if !(p.z > 0.0) {
            return Err(GeometryError::BehindCamera { depth: p.z });
        }
        Ok([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }

    /// Pixel → normalized image coordinates.
    pub fn normalize(&self, px: [f64; 2]) -> [f64; 2] {
        [(px[0] - self.cx) / self.fx, (px[1] - self.cy) / self.fy]
    }

    pub fn contains(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0 && px[1] >= 0.0 && px[0] < f64::from(self.width) && px[1] < f64::from(self.height)
    }
}

/// A calibrated camera: intrinsics plus the world → camera extrinsic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    #[serde(flatten)]
    pub intrinsics: Intrinsics,
    pub extrinsic: Pose6D,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, extrinsic: Pose6D) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        Ok(Self {
            intrinsics,
            extrinsic,
        })
    }

    /// Camera at `center` looking at `target`; `down` is the world direction
    /// that should appear toward increasing image rows.
    pub fn look_at(
        intrinsics: Intrinsics,
        center: Vector3<f64>,
        target: Vector3<f64>,
        down: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let z = (target - center).normalize();
        let x = z.cross(&down);
        if x.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera("viewing direction parallel to down hint".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[
            x.transpose(),
            y.transpose(),
            z.transpose(),
        ]));
        let t = -(r * center);
        Self::new(intrinsics, Pose6D::new(&r, &t))
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.intrinsics.validate()
    }

    pub fn to_camera_frame(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsic.transform_point(p)
    }

    /// Projects a world point to pixels.
    pub fn project(&self, p: &[f64; 3]) -> Result<[f64; 2], GeometryError> {
        self.intrinsics
            .project_camera_point(&self.to_camera_frame(&Vector3::from(*p)))
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.extrinsic.inverse_origin()
    }

    /// `[R | t]`, the normalized-coordinate projection matrix.
    pub fn normalized_projection(&self) -> Matrix3x4<f64> {
        let r = self.extrinsic.rotation_matrix();
        let t = self.extrinsic.translation_vector();
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intr() -> Intrinsics {
        Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 320.0,
            width: 640,
            height: 640,
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = CameraModel::new(intr(), Pose6D::identity()).unwrap();
        for z in [1.0, 250.0, 1e5] {
            assert_eq!(cam.project(&[0.0, 0.0, z]).unwrap(), [320.0, 320.0]);
        }
    }

    #[test]
    fn unit_offset_projection() {
        let cam = CameraModel::new(intr(), Pose6D::identity()).unwrap();
        assert_eq!(cam.project(&[1.0, 0.0, 500.0]).unwrap(), [321.0, 320.0]);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = CameraModel::new(intr(), Pose6D::identity()).unwrap();
        assert!(matches!(cam.project(&[0.0, 0.0, -1.0]), Err(GeometryError::BehindCamera { .. })));
        assert!(matches!(cam.project(&[0.0, 0.0, 0.0]), Err(GeometryError::BehindCamera { .. })));
    }

    #[test]
    fn invalid_intrinsics() {
        let mut i = intr();
        i.cx = 640.0;
        assert!(i.validate().is_err());
        let mut i = intr();
        i.fy = 0.0;
        assert!(i.validate().is_err());
    }

    #[test]
    fn look_at_centres_target() {
        let cam = CameraModel::look_at(
            intr(),
            Vector3::new(300.0, -200.0, 400.0),
            Vector3::new(10.0, 20.0, 30.0),
            Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap();
        let px = cam.project(&[10.0, 20.0, 30.0]).unwrap();
        assert!((px[0] - 320.0).abs() < 1e-9 && (px[1] - 320.0).abs() < 1e-9);
        assert!((cam.center() - Vector3::new(300.0, -200.0, 400.0)).norm() < 1e-9);
    }

    #[test]
    fn half_turn_rotation_survives_storage() {
        // looking back along the world y/z plane gives a rotation by exactly π
        let cam = CameraModel::look_at(
            intr(),
            Vector3::new(0.0, -250.0, 450.0),
            Vector3::new(0.0, 60.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap();
        assert!((cam.center() - Vector3::new(0.0, -250.0, 450.0)).norm() < 1e-9);
        assert!(cam.to_camera_frame(&Vector3::new(0.0, 60.0, 0.0)).z > 0.0);
    }

    proptest! {
        #[test]
        fn pose_inverse_composes_to_identity(r in proptest::array::uniform3(-3.0f64..3.0), t in proptest::array::uniform3(-500.0f64..500.0)) {
            let p = Pose6D { rotation: r, translation: t };
            let m = p.to_matrix() * p.inverse().to_matrix();
            prop_assert!((m - nalgebra::Matrix4::identity()).amax() < 1e-10);
        }

        #[test]
        fn projection_invariant_to_common_rigid_motion(
            r in proptest::array::uniform3(-1.0f64..1.0),
            t in proptest::array::uniform3(-100.0f64..100.0),
            g in proptest::array::uniform6(-1.0f64..1.0),
            x in proptest::array::uniform2(-50.0f64..50.0),
        ) {
            let cam = CameraModel::new(intr(), Pose6D { rotation: r, translation: [t[0], t[1], t[2] + 800.0] }).unwrap();
            let point = [x[0], x[1], 0.0];
            let Ok(a) = cam.project(&point) else { return Ok(()); };
            let motion = Pose6D { rotation: [g[0], g[1], g[2]], translation: [g[3] * 100.0, g[4] * 100.0, g[5] * 100.0] };
            let moved_cam = CameraModel { extrinsic: cam.extrinsic.compose(&motion.inverse()), ..cam };
            let moved_point: [f64; 3] = motion.transform_point(&Vector3::from(point)).into();
            let b = moved_cam.project(&moved_point).unwrap();
            prop_assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
        }
    }
}
