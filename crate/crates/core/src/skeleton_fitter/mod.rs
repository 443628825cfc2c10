//! Fits hand parameters to weighted multi-view 2D joint detections.
//!
//! The reported loss is the weighted sum of unsquared pixel distances plus
//! the joint-limit penalty. The optimizer works on the squared form: each
//! (view, joint) term contributes the residual `√(v·ω)·e`, followed by the
//! smooth-penalty residuals. Finger scales stay fixed; the 20 articulation
//! angles and the 6 global pose values are free.

mod fit;
mod init;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera_geometry::{CameraModel, GeometryError};
use crate::geometry2d::{is_simple_polygon, point_in_polygon, Point2};
use crate::hand_model::{
    forward_kinematics_unchecked, limit_penalty_mode, HandModelError, HandParams, JointLimits,
    PenaltyMode, SkeletonTemplate, NUM_JOINTS,
};

pub use fit::{check_gradient, fit, loss_gradient, FitConfig, FitResult, FitStatus, GradientCheck, TraceEntry};
pub use init::{initial_guess, rigid_align, InitStrategy};

/// Visibility weight of a joint inside (or on) the hand mask.
pub const VISIBLE: f64 = 1.0;
/// Visibility weight of a joint outside the hand mask.
pub const OUTSIDE_MASK: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FitError {
    #[error("invalid observation for view {view}: {reason}")]
    Observation { view: usize, reason: String },
    #[error("hand mask is not a simple polygon")]
    InvalidMask,
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("no observations")]
    NoViews,
    #[error("loss is not finite")]
    NonFinite,
    #[error("only {found} joints could be triangulated, at least 3 are needed")]
    InsufficientTriangulation { found: usize },
    #[error(transparent)]
    Hand(#[from] HandModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointObservation {
    pub pixel: [f64; 2],
    /// Detector confidence ω in [0, 1].
    pub confidence: f64,
    /// Visibility weight v, either [`VISIBLE`] or [`OUTSIDE_MASK`].
    pub visibility: f64,
}

impl JointObservation {
    pub fn new(pixel: [f64; 2], confidence: f64) -> Self {
        Self {
            pixel,
            confidence,
            visibility: VISIBLE,
        }
    }

    pub fn weight(&self) -> f64 {
        self.confidence * self.visibility
    }
}

/// One camera's 2D joint detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewObservation {
    pub view: usize,
    pub camera: CameraModel,
    pub joints: Vec<JointObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<Point2>>,
}

impl ViewObservation {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |reason: String| FitError::Observation {
            view: self.view,
            reason,
        };
        self.camera.validate().map_err(|e| bad(e.to_string()))?;
        if self.joints.len() != NUM_JOINTS {
            return Err(bad(format!("{} joints, expected {NUM_JOINTS}", self.joints.len())));
        }
        for (k, j) in self.joints.iter().enumerate() {
            if !(j.pixel[0].is_finite() && j.pixel[1].is_finite()) {
                return Err(bad(format!("joint {k} pixel is not finite")));
            }
            if !(0.0..=1.0).contains(&j.confidence) {
                return Err(bad(format!("joint {k} confidence {} outside [0, 1]", j.confidence)));
            }
            if j.visibility != VISIBLE && j.visibility != OUTSIDE_MASK {
                return Err(bad(format!("joint {k} visibility {} is not 0.5 or 1", j.visibility)));
            }
        }
        Ok(())
    }

    /// Sets every joint's visibility weight from the mask, if there is one.
    pub fn apply_mask(&mut self) -> Result<(), FitError> {
        if let Some(mask) = &self.mask {
            let pixels: Vec<Point2> = self.joints.iter().map(|j| j.pixel).collect();
            let v = assign_visibility(&pixels, mask)?;
            for (j, w) in self.joints.iter_mut().zip(v) {
                j.visibility = w;
            }
        }
        Ok(())
    }
}

/// Visibility weights from a hand mask: [`VISIBLE`] inside or on the
/// boundary, [`OUTSIDE_MASK`] elsewhere.
pub fn assign_visibility(joints2d: &[Point2], mask: &[Point2]) -> Result<Vec<f64>, FitError> {
    if !is_simple_polygon(mask) {
        return Err(FitError::InvalidMask);
    }
    Ok(joints2d
        .iter()
        .map(|p| if point_in_polygon(*p, mask) { VISIBLE } else { OUTSIDE_MASK })
        .collect())
}

/// Weighted reprojection loss with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionLoss {
    pub value: f64,
    /// `(view, joint)` pairs behind their camera, left out of `value`.
    pub behind_camera: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub loss_2d: f64,
    pub loss_model: f64,
}

/// Pixel error `projection − detection` of one joint, `None` behind the camera.
pub(crate) fn projection_error(camera: &CameraModel, point: &[f64; 3], observed: [f64; 2]) -> Option<[f64; 2]> {
    let pc = camera.to_camera_frame(&Vector3::from(*point));
    camera
        .intrinsics
        .project_camera_point(&pc)
        .ok()
        .map(|px| [px[0] - observed[0], px[1] - observed[1]])
}

/// Sum over views and joints of `v·ω·‖detection − projection‖`.
pub fn reprojection_loss(
    params: &HandParams,
    template: &SkeletonTemplate,
    observations: &[ViewObservation],
) -> Result<ReprojectionLoss, FitError> {
    params.validate()?;
    template.validate()?;
    for o in observations {
        o.validate()?;
    }
    Ok(reprojection_loss_unchecked(params, template, observations))
}

pub(crate) fn reprojection_loss_unchecked(
    params: &HandParams,
    template: &SkeletonTemplate,
    observations: &[ViewObservation],
) -> ReprojectionLoss {
    let joints = forward_kinematics_unchecked(params, template);
    let mut value = 0.0;
    let mut behind_camera = Vec::new();
    for (i, obs) in observations.iter().enumerate() {
        for (k, j) in obs.joints.iter().enumerate() {
            let w = j.weight();
            if w == 0.0 {
                continue;
            }
            match projection_error(&obs.camera, &joints.points[k], j.pixel) {
                Some(e) => value += w * e[0].hypot(e[1]),
                None => behind_camera.push((i, k)),
            }
        }
    }
    ReprojectionLoss { value, behind_camera }
}

/// Reprojection loss plus the joint-limit penalty in `mode`.
pub fn total_loss(
    params: &HandParams,
    template: &SkeletonTemplate,
    observations: &[ViewObservation],
    limits: &JointLimits,
    mode: PenaltyMode,
) -> Result<LossBreakdown, FitError> {
    let loss_2d = reprojection_loss(params, template, observations)?.value;
    let loss_model = limit_penalty_mode(params, limits, mode);
    Ok(LossBreakdown {
        total: loss_2d + loss_model,
        loss_2d,
        loss_model,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::camera_geometry::Intrinsics;
    use crate::hand_model::HandModelFile;

    pub fn intrinsics() -> Intrinsics {
        Intrinsics {
            fx: 800.0,
            fy: 800.0,
            cx: 640.0,
            cy: 480.0,
            width: 1280,
            height: 960,
        }
    }

    pub fn rig() -> Vec<CameraModel> {
        let target = Vector3::new(0.0, 60.0, 0.0);
        let down = Vector3::new(0.0, -1.0, 0.0);
        [
            Vector3::new(0.0, -250.0, 450.0),
            Vector3::new(420.0, 60.0, 300.0),
            Vector3::new(-420.0, 60.0, 300.0),
        ]
        .iter()
        .map(|c| CameraModel::look_at(intrinsics(), *c, target, down).unwrap())
        .collect()
    }

    pub fn observe(params: &HandParams, cameras: &[CameraModel]) -> Vec<ViewObservation> {
        let model = HandModelFile::builtin();
        let joints = forward_kinematics_unchecked(params, &model.template);
        cameras
            .iter()
            .enumerate()
            .map(|(view, cam)| ViewObservation {
                view,
                camera: *cam,
                joints: joints
                    .points
                    .iter()
                    .map(|p| JointObservation::new(cam.project(p).unwrap(), 1.0))
                    .collect(),
                mask: None,
            })
            .collect()
    }

    pub fn posed() -> HandParams {
        let mut p = HandParams::default();
        for (j, t) in p.theta.iter_mut().enumerate() {
            *t = 0.1 + 0.03 * j as f64 * if j % 4 == 1 { 0.2 } else { 1.0 };
        }
        p.phi = [5.0, -8.0, 12.0, 0.1, -0.2, 0.15];
        p
    }
}
