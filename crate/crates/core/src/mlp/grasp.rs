use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{argmax, Head, MlpError, MlpModel, PoseVector63};
use crate::hand_model::{
    forward_kinematics_unchecked, HandParams, JointLimits, JointSet3D, SkeletonTemplate, MIDDLE_MCP, NUM_JOINTS,
    WRIST,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    /// Cutkosky's 17 manufacturing grasps.
    Cutkosky17,
    /// Feix et al.'s 33 grasp types.
    Feix33,
}

/// A grasp class within a taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraspTag {
    pub taxonomy: Taxonomy,
    pub class: usize,
}

/// Prototype articulation, compactly: thumb angles, base and middle flexion
/// of the four fingers (distal flexion follows at 3/4 of the middle), and
/// a spread factor fanning the fingers apart.
struct Prototype {
    name: &'static str,
    thumb: [f64; 4],
    base: [f64; 4],
    mid: [f64; 4],
    spread: f64,
}

const fn p(name: &'static str, thumb: [f64; 4], base: [f64; 4], mid: [f64; 4], spread: f64) -> Prototype {
    Prototype {
        name,
        thumb,
        base,
        mid,
        spread,
    }
}

const CUTKOSKY: [Prototype; 17] = [
    p("Large Diameter", [0.4, 0.5, 0.2, 0.2], [0.5; 4], [0.6; 4], 0.0),
    p("Small Diameter", [0.7, 0.2, 0.6, 0.6], [1.0; 4], [1.5; 4], 0.0),
    p("Medium Wrap", [0.5, 0.0, 0.4, 0.4], [0.8; 4], [1.1; 4], 0.0),
    p("Adducted Thumb", [-0.2, -0.4, 0.0, 0.0], [0.9; 4], [1.3; 4], 0.0),
    p("Light Tool", [0.1, -0.1, 0.5, 0.7], [0.6, 0.9, 1.0, 1.1], [1.2, 1.4, 1.5, 1.6], 0.0),
    p("Thumb-4 Finger", [0.6, 0.5, 0.3, 0.2], [0.7; 4], [0.3; 4], 0.2),
    p("Thumb-3 Finger", [0.6, 0.5, 0.3, 0.2], [0.7, 0.7, 0.7, 1.4], [0.3, 0.3, 0.3, 1.6], 0.2),
    p("Thumb-2 Finger", [0.6, 0.5, 0.3, 0.2], [0.7, 0.7, 1.4, 1.4], [0.3, 0.3, 1.6, 1.6], 0.2),
    p("Thumb-Index Finger", [0.6, 0.4, 0.3, 0.3], [0.8, 1.3, 1.4, 1.4], [0.5, 1.6, 1.6, 1.6], 0.0),
    p("Power Disk", [0.5, 0.6, 0.1, 0.1], [0.5; 4], [0.9; 4], 1.0),
    p("Power Sphere", [0.6, 0.6, 0.3, 0.3], [0.6; 4], [1.0; 4], 0.6),
    p("Precision Disk", [0.4, 0.6, 0.1, 0.1], [0.4; 4], [0.2; 4], 1.0),
    p("Precision Sphere", [0.5, 0.6, 0.2, 0.2], [0.6; 4], [0.5; 4], 0.6),
    p("Tripod", [0.6, 0.4, 0.4, 0.3], [0.7, 0.7, 1.3, 1.3], [0.6, 0.6, 1.5, 1.5], 0.0),
    p("Lateral Pinch", [0.0, -0.3, 0.3, 0.3], [0.9, 1.0, 1.1, 1.2], [1.1, 1.2, 1.3, 1.4], 0.0),
    p("Fixed Hook", [-0.2, -0.2, -0.1, -0.1], [0.1; 4], [1.6; 4], 0.0),
    p("Platform", [-0.3, -0.3, 0.0, 0.0], [0.0; 4], [0.0; 4], 0.2),
];

const FEIX: [Prototype; 33] = [
    p("Large Diameter", [0.4, 0.5, 0.2, 0.2], [0.5; 4], [0.6; 4], 0.0),
    p("Small Diameter", [0.7, 0.2, 0.6, 0.6], [1.0; 4], [1.5; 4], 0.0),
    p("Medium Wrap", [0.5, 0.0, 0.4, 0.4], [0.8; 4], [1.1; 4], 0.0),
    p("Adducted Thumb", [-0.2, -0.4, 0.0, 0.0], [0.9; 4], [1.3; 4], 0.0),
    p("Light Tool", [0.1, -0.1, 0.5, 0.7], [0.6, 0.9, 1.0, 1.1], [1.2, 1.4, 1.5, 1.6], 0.0),
    p("Prismatic 4 Finger", [0.6, 0.5, 0.3, 0.2], [0.7; 4], [0.3; 4], 0.2),
    p("Prismatic 3 Finger", [0.6, 0.5, 0.3, 0.2], [0.7, 0.7, 0.7, 1.4], [0.3, 0.3, 0.3, 1.6], 0.2),
    p("Prismatic 2 Finger", [0.6, 0.5, 0.3, 0.2], [0.7, 0.7, 1.4, 1.4], [0.3, 0.3, 1.6, 1.6], 0.2),
    p("Palmar Pinch", [0.7, 0.5, 0.2, 0.1], [1.0, 0.3, 0.2, 0.2], [0.2, 0.3, 0.3, 0.3], 0.0),
    p("Power Disk", [0.5, 0.6, 0.1, 0.1], [0.5; 4], [0.9; 4], 1.0),
    p("Power Sphere", [0.6, 0.6, 0.3, 0.3], [0.6; 4], [1.0; 4], 0.6),
    p("Precision Disk", [0.4, 0.6, 0.1, 0.1], [0.4; 4], [0.2; 4], 1.0),
    p("Precision Sphere", [0.5, 0.6, 0.2, 0.2], [0.6; 4], [0.5; 4], 0.6),
    p("Tripod", [0.6, 0.4, 0.4, 0.3], [0.7, 0.7, 1.3, 1.3], [0.6, 0.6, 1.5, 1.5], 0.0),
    p("Fixed Hook", [-0.2, -0.2, -0.1, -0.1], [0.1; 4], [1.6; 4], 0.0),
    p("Lateral", [0.0, -0.3, 0.3, 0.3], [0.9, 1.0, 1.1, 1.2], [1.1, 1.2, 1.3, 1.4], 0.0),
    p("Index Finger Extension", [0.3, 0.0, 0.4, 0.4], [0.1, 1.0, 1.0, 1.0], [0.1, 1.5, 1.5, 1.5], 0.0),
    p("Extension Type", [0.5, 0.6, 0.0, 0.0], [0.5; 4], [0.0; 4], 0.0),
    p("Distal Type", [0.4, 0.5, 0.5, 0.5], [0.6, 0.6, 1.2, 1.2], [1.4, 1.4, 1.2, 1.2], 0.5),
    p("Writing Tripod", [0.5, 0.3, 0.5, 0.4], [0.5, 0.9, 1.2, 1.3], [0.6, 1.0, 1.4, 1.5], 0.0),
    p("Tripod Variation", [0.7, 0.5, 0.2, 0.2], [0.9, 0.9, 0.5, 0.5], [0.8, 0.8, 0.5, 0.5], 0.3),
    p("Parallel Extension", [0.4, 0.5, 0.1, 0.0], [1.2; 4], [0.0; 4], 0.0),
    p("Adduction Grip", [0.1, 0.0, 0.2, 0.2], [0.3, 0.3, 1.2, 1.2], [0.3, 0.3, 1.5, 1.5], -0.8),
    p("Tip Pinch", [0.7, 0.4, 0.6, 0.7], [1.1, 0.5, 0.4, 0.3], [1.2, 0.4, 0.3, 0.3], 0.0),
    p("Lateral Tripod", [0.1, -0.2, 0.4, 0.4], [0.7, 0.7, 1.2, 1.3], [1.0, 0.9, 1.5, 1.5], 0.0),
    p("Sphere 4 Finger", [0.6, 0.6, 0.3, 0.3], [0.5, 0.5, 0.5, 1.4], [0.8, 0.8, 0.8, 1.6], 0.8),
    p("Quadpod", [0.6, 0.5, 0.4, 0.3], [0.9, 0.9, 0.9, 1.4], [0.9, 0.9, 0.9, 1.6], 0.3),
    p("Sphere 3 Finger", [0.6, 0.6, 0.3, 0.3], [0.5, 0.5, 1.4, 1.4], [0.8, 0.8, 1.6, 1.6], 0.8),
    p("Stick", [0.2, 0.0, 0.1, 0.1], [0.2, 0.6, 0.9, 1.2], [0.3, 0.9, 1.3, 1.6], 0.0),
    p("Palmar", [-0.1, -0.3, 0.1, 0.1], [0.4; 4], [0.1; 4], 0.0),
    p("Ring", [0.6, 0.3, 0.7, 0.8], [0.9, 0.2, 0.2, 0.2], [1.3, 0.2, 0.2, 0.2], 0.4),
    p("Ventral", [0.0, -0.1, 0.0, 0.0], [0.3, 1.1, 1.2, 1.3], [0.3, 1.5, 1.5, 1.6], 0.0),
    p("Inferior Pincer", [0.8, 0.3, 0.8, 0.9], [1.3, 0.6, 0.6, 0.6], [1.0, 0.9, 0.9, 0.9], 0.0),
];

/// Abduction per unit spread for index, middle, ring and pinky.
const SPREAD_PROFILE: [f64; 4] = [-0.25, -0.08, 0.08, 0.25];

impl Taxonomy {
    fn table(self) -> &'static [Prototype] {
        match self {
            Taxonomy::Cutkosky17 => &CUTKOSKY,
            Taxonomy::Feix33 => &FEIX,
        }
    }

    pub fn num_classes(self) -> usize {
        self.table().len()
    }

    pub fn class_names(self) -> Vec<&'static str> {
        self.table().iter().map(|p| p.name).collect()
    }
}

/// One canonical articulation per class, clamped to `limits`, with unit
/// finger scales and identity global pose.
pub fn prototype_params(taxonomy: Taxonomy, limits: &JointLimits) -> Vec<HandParams> {
    taxonomy
        .table()
        .iter()
        .map(|proto| {
            let mut params = HandParams::default();
            params.theta[..4].copy_from_slice(&proto.thumb);
            for f in 0..4 {
                let dof = 4 * (f + 1);
                params.theta[dof] = proto.base[f];
                params.theta[dof + 1] = proto.spread * SPREAD_PROFILE[f];
                params.theta[dof + 2] = proto.mid[f];
                params.theta[dof + 3] = 0.75 * proto.mid[f];
            }
            limits.clamp(&mut params.theta);
            params
        })
        .collect()
}

/// Wrist-relative joints divided by the wrist–middle-knuckle distance.
/// Orientation is kept, so rotating the hand rotates the output.
pub fn preprocess_pose(joints: &JointSet3D) -> Result<PoseVector63, MlpError> {
    joints
        .validate()
        .map_err(|e| MlpError::DegeneratePose(e.to_string()))?;
    let root = joints.point(WRIST);
    let scale = (joints.point(MIDDLE_MCP) - root).norm();
    if !(scale > 1e-9) {
        return Err(MlpError::DegeneratePose("wrist and middle knuckle coincide".into()));
    }
    PoseVector63::new(
        (0..NUM_JOINTS)
            .flat_map(|k| {
                let p = (joints.point(k) - root) / scale;
                [p.x, p.y, p.z]
            })
            .collect(),
    )
}

/// Noisy samples around every prototype: each articulation gets Gaussian
/// noise of `sigma` radians (clamped to the limits). Class-major order.
pub fn grasp_dataset<R: Rng + ?Sized>(
    taxonomy: Taxonomy,
    template: &SkeletonTemplate,
    limits: &JointLimits,
    per_class: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<(PoseVector63, usize)>, MlpError> {
    let noise = Normal::new(0.0, sigma).map_err(|e| MlpError::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(per_class * taxonomy.num_classes());
    for (class, proto) in prototype_params(taxonomy, limits).iter().enumerate() {
        for _ in 0..per_class {
            let mut params = proto.clone();
            params.theta.iter_mut().for_each(|t| *t += noise.sample(rng));
            limits.clamp(&mut params.theta);
            out.push((preprocess_pose(&forward_kinematics_unchecked(&params, template))?, class));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspPrediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// Most probable grasp class (lowest id among ties) and the class
/// probabilities.
pub fn classify_grasp(model: &MlpModel, pose: &PoseVector63, taxonomy: Taxonomy) -> Result<GraspPrediction, MlpError> {
    if model.head != Head::Softmax {
        return Err(MlpError::TargetKind(model.head));
    }
    if model.output_size() != taxonomy.num_classes() {
        return Err(MlpError::Dimension {
            expected: taxonomy.num_classes(),
            found: model.output_size(),
        });
    }
    let probabilities = model.forward(pose.as_slice())?;
    Ok(GraspPrediction {
        class: argmax(&probabilities),
        probabilities,
    })
}
