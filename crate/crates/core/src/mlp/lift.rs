use serde::{Deserialize, Serialize};

use super::{Examples, MlpError, MlpModel, PairedExamples, Target};
use crate::camera_geometry::CameraModel;
use crate::dataset_pairs::SiamesePair;
use crate::hand_model::{JointSet3D, NUM_JOINTS, WRIST};
use crate::skeleton_fitter::ViewObservation;
use crate::synth_oracle::SceneRecord;

pub const POSE_DIM: usize = 3 * NUM_JOINTS;
/// Lifting targets are stored in units of this many millimetres.
pub const LIFT_SCALE_MM: f64 = 100.0;

/// 21 joints × 3 coordinates, flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PoseVector63(Vec<f64>);

impl PoseVector63 {
    pub fn new(values: Vec<f64>) -> Result<Self, MlpError> {
        if values.len() != POSE_DIM {
            return Err(MlpError::Dimension {
                expected: POSE_DIM,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::DegeneratePose("non-finite coordinate".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn joint(&self, k: usize) -> [f64; 3] {
        [self.0[3 * k], self.0[3 * k + 1], self.0[3 * k + 2]]
    }

    pub fn joints(&self) -> Vec<[f64; 3]> {
        (0..NUM_JOINTS).map(|k| self.joint(k)).collect()
    }
}

impl TryFrom<Vec<f64>> for PoseVector63 {
    type Error = MlpError;

    fn try_from(v: Vec<f64>) -> Result<Self, MlpError> {
        Self::new(v)
    }
}

impl From<PoseVector63> for Vec<f64> {
    fn from(p: PoseVector63) -> Self {
        p.0
    }
}

/// Lifter input for one view: `(u/width, v/height, ω)` per joint.
pub fn lift_features(view: &ViewObservation) -> Vec<f64> {
    let w = f64::from(view.camera.intrinsics.width);
    let h = f64::from(view.camera.intrinsics.height);
    view.joints
        .iter()
        .flat_map(|j| [j.pixel[0] / w, j.pixel[1] / h, j.confidence])
        .collect()
}

/// Lifter target: wrist-relative joints in the camera's frame, in units of
/// [`LIFT_SCALE_MM`].
pub fn lift_target(joints: &JointSet3D, camera: &CameraModel) -> Vec<f64> {
    let root = camera.to_camera_frame(&joints.point(WRIST));
    (0..NUM_JOINTS)
        .flat_map(|k| {
            let p = (camera.to_camera_frame(&joints.point(k)) - root) / LIFT_SCALE_MM;
            [p.x, p.y, p.z]
        })
        .collect()
}

/// One lifting example per view of each scene.
pub fn lift_examples(records: &[SceneRecord]) -> Examples {
    let mut out = Examples::default();
    for rec in records {
        for view in &rec.views {
            out.push(
                lift_features(view),
                Target::Values(lift_target(&rec.ground_truth.joints, &view.camera)),
            );
        }
    }
    out
}

/// One paired example per view that survived in both branches of a pair;
/// both inputs share the clean view's target.
pub fn paired_lift_examples(pairs: &[SiamesePair]) -> PairedExamples {
    let mut out = PairedExamples::default();
    for pair in pairs {
        for clean in &pair.clean.views {
            let Some(occluded) = pair.occluded.views.iter().find(|v| v.view == clean.view) else {
                continue;
            };
            out.occluded.push(lift_features(occluded));
            out.clean.push(lift_features(clean));
            out.targets
                .push(Target::Values(lift_target(&pair.ground_truth.joints, &clean.camera)));
        }
    }
    out
}

/// Wrist-relative camera-frame pose in millimetres predicted from lifter
/// features.
pub fn lift_2d_to_3d(model: &MlpModel, input: &[f64]) -> Result<PoseVector63, MlpError> {
    if model.output_size() != POSE_DIM {
        return Err(MlpError::Dimension {
            expected: POSE_DIM,
            found: model.output_size(),
        });
    }
    let out = model.forward(input)?;
    PoseVector63::new(out.iter().map(|v| v * LIFT_SCALE_MM).collect())
}
