use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{FitError, ViewObservation, VISIBLE};
use crate::camera_geometry::{triangulate, CameraModel};
use crate::hand_model::{
    forward_kinematics_unchecked, inverse_articulation, HandParams, JointLimits, SkeletonTemplate,
    NUM_FINGERS, NUM_JOINTS,
};

/// Minimum confidence for a detection to take part in triangulation.
const TRIANGULATION_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Rigid palm alignment with every articulation at zero.
    RigidOnly,
    /// Rigid palm alignment, then articulation solved from the triangulated
    /// finger joints and clamped to the limits.
    #[default]
    RigidAndArticulation,
}

/// Least-squares rotation and translation taking `src` onto `dst`
/// (`dst ≈ R·src + t`). Needs three non-collinear pairs.
pub fn rigid_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<(Rotation3<f64>, Vector3<f64>)> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[1] <= 1e-9 * sv[0].max(1e-300) {
        return None;
    }
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = Rotation3::from_matrix_unchecked(v_t.transpose() * d * u.transpose());
    Some((r, cd - r * cs))
}

/// Starting parameters from the observations: joints seen confidently and
/// inside the mask in at least two views are triangulated, the palm is
/// aligned rigidly to them, and (with the default strategy) the finger
/// articulation is read off the triangulated finger joints.
pub fn initial_guess(
    observations: &[ViewObservation],
    template: &SkeletonTemplate,
    limits: &JointLimits,
    gamma: &[f64; NUM_FINGERS],
    strategy: InitStrategy,
) -> Result<HandParams, FitError> {
    let mut points: [Option<Vector3<f64>>; NUM_JOINTS] = [None; NUM_JOINTS];
    for (k, slot) in points.iter_mut().enumerate() {
        let (pixels, cameras): (Vec<[f64; 2]>, Vec<CameraModel>) = observations
            .iter()
            .filter_map(|o| {
                let j = o.joints.get(k)?;
                (j.confidence >= TRIANGULATION_CONFIDENCE && j.visibility == VISIBLE).then_some((j.pixel, o.camera))
            })
            .unzip();
        if cameras.len() < 2 {
            continue;
        }
        if let Ok(t) = triangulate(&pixels, &cameras) {
            if !t.ill_conditioned {
                *slot = Some(Vector3::from(t.point));
            }
        }
    }

    let mut params = HandParams {
        gamma: *gamma,
        ..HandParams::default()
    };
    let palm: Vec<(Vector3<f64>, Vector3<f64>)> = template
        .palm_points(gamma)
        .into_iter()
        .filter_map(|(k, local)| points[k].map(|p| (local, p)))
        .collect();
    let aligned = split_align(&palm).or_else(|| {
        let rest = forward_kinematics_unchecked(&params, template);
        let all: Vec<_> = (0..NUM_JOINTS)
            .filter_map(|k| points[k].map(|p| (Vector3::from(rest.points[k]), p)))
            .collect();
        split_align(&all)
    });
    let Some((rotation, translation)) = aligned else {
        return Err(FitError::InsufficientTriangulation {
            found: points.iter().flatten().count(),
        });
    };
    params.set_global(&rotation, &translation);

    if strategy == InitStrategy::RigidAndArticulation {
        let mut local: [Option<Vector3<f64>>; NUM_JOINTS] = [None; NUM_JOINTS];
        for (k, p) in points.iter().enumerate() {
            local[k] = p.map(|p| rotation.inverse() * (p - translation));
        }
        let mut theta = inverse_articulation(template, &local);
        limits.clamp(&mut theta);
        params.theta = theta;
    }
    Ok(params)
}

fn split_align(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Option<(Rotation3<f64>, Vector3<f64>)> {
    let (src, dst): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
    rigid_align(&src, &dst)
}
