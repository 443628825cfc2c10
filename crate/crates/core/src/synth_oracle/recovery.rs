use serde::{Deserialize, Serialize};

use super::SceneRecord;
use crate::hand_model::{forward_kinematics_unchecked, JointLimits, SkeletonTemplate};
use crate::skeleton_fitter::{fit, initial_guess, FitConfig, FitError, FitResult, InitStrategy};

/// A fit of one synthetic scene scored against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFit {
    pub scene_id: u64,
    pub result: FitResult,
    /// Mean distance between fitted and true joints, mm.
    pub mean_joint_error_mm: f64,
}

/// Initializes from triangulation with the ground-truth finger scales, fits
/// and scores the result.
pub fn fit_scene(
    record: &SceneRecord,
    template: &SkeletonTemplate,
    limits: &JointLimits,
    strategy: InitStrategy,
    config: &FitConfig,
) -> Result<SceneFit, FitError> {
    let gamma = record.ground_truth.params.gamma;
    let init = initial_guess(&record.views, template, limits, &gamma, strategy)?;
    let result = fit(&record.views, template, limits, &init, config)?;
    let fitted = forward_kinematics_unchecked(&result.params, template);
    Ok(SceneFit {
        scene_id: record.scene_id,
        mean_joint_error_mm: fitted.mean_distance(&record.ground_truth.joints),
        result,
    })
}
