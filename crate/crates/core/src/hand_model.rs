//! Forward-kinematics hand skeleton.
//!
//! The hand is a 21-joint tree: the wrist (joint 0) plus four joints per
//! finger in the order thumb, index, middle, ring, pinky. Each finger owns
//! four articulation angles `[base flexion, base abduction, middle flexion,
//! distal flexion]`; for the thumb the base joint is the CMC.
//!
//! `HandParams` holds 20 articulation angles, 5 per-finger length scales and
//! a 6-value global pose (translation in mm followed by an axis-angle
//! rotation). Hand-frame conventions of the default template: fingers
//! extend along +y, the palm faces +z and positive flexion curls toward it.

use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub const NUM_JOINTS: usize = 21;
pub const NUM_ARTICULATIONS: usize = 20;
pub const NUM_FINGERS: usize = 5;
pub const NUM_GLOBAL: usize = 6;
pub const WRIST: usize = 0;
/// Middle-finger MCP joint, used as the scale reference for pose vectors.
pub const MIDDLE_MCP: usize = 9;

pub const FINGER_NAMES: [&str; NUM_FINGERS] = ["thumb", "index", "middle", "ring", "pinky"];

/// Direction of every bone in its own segment frame.
const BONE: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HandModelError {
    #[error("{field} has {found} entries, expected {expected}")]
    Dimension {
        field: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("finger scale gamma[{finger}] = {value} must be positive")]
    NonPositiveScale { finger: usize, value: f64 },
    #[error("parameter {field}[{index}] is not finite")]
    NonFinite { field: &'static str, index: usize },
    #[error("invalid skeleton template: {0}")]
    Template(String),
    #[error("invalid joint limits: {0}")]
    Limits(String),
    #[error("failed to parse hand model file: {0}")]
    Parse(String),
}

/// Joints of finger `finger`: base, middle, distal, tip.
pub fn finger_joints(finger: usize) -> [usize; 4] {
    let b = 1 + 4 * finger;
    [b, b + 1, b + 2, b + 3]
}

/// Finger owning articulation `dof`.
pub fn dof_finger(dof: usize) -> usize {
    dof / 4
}

/// Joints whose position depends on articulation `dof`.
pub fn dof_subtree(dof: usize) -> Vec<usize> {
    let joints = finger_joints(dof_finger(dof));
    let first = match dof % 4 {
        0 | 1 => 1,
        2 => 2,
        _ => 3,
    };
    joints[first..].to_vec()
}

/// The hand parameter vector: articulation `theta`, finger scales `gamma`,
/// global pose `phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    pub theta: [f64; NUM_ARTICULATIONS],
    pub gamma: [f64; NUM_FINGERS],
    pub phi: [f64; NUM_GLOBAL],
}

impl Default for HandParams {
    fn default() -> Self {
        Self {
            theta: [0.0; NUM_ARTICULATIONS],
            gamma: [1.0; NUM_FINGERS],
            phi: [0.0; NUM_GLOBAL],
        }
    }
}

impl HandParams {
    pub fn from_slices(theta: &[f64], gamma: &[f64], phi: &[f64]) -> Result<Self, HandModelError> {
        fn take<const N: usize>(field: &'static str, v: &[f64]) -> Result<[f64; N], HandModelError> {
            v.try_into().map_err(|_| HandModelError::Dimension {
                field,
                found: v.len(),
                expected: N,
            })
        }
        let params = Self {
            theta: take("theta", theta)?,
            gamma: take("gamma", gamma)?,
            phi: take("phi", phi)?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), HandModelError> {
        let check = |field: &'static str, v: &[f64]| {
            v.iter()
                .position(|x| !x.is_finite())
                .map_or(Ok(()), |index| Err(HandModelError::NonFinite { field, index }))
        };
        check("theta", &self.theta)?;
        check("gamma", &self.gamma)?;
        check("phi", &self.phi)?;
        if let Some((finger, &value)) = self.gamma.iter().enumerate().find(|(_, g)| **g <= 0.0) {
            return Err(HandModelError::NonPositiveScale { finger, value });
        }
        Ok(())
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.phi[0], self.phi[1], self.phi[2])
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(Vector3::new(self.phi[3], self.phi[4], self.phi[5]))
    }

    pub fn set_global(&mut self, rotation: &Rotation3<f64>, translation: &Vector3<f64>) {
        let r = UnitQuaternion::from_rotation_matrix(rotation).scaled_axis();
        self.phi = [translation.x, translation.y, translation.z, r.x, r.y, r.z];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum Frame {
    World,
    Camera(usize),
}

/// 21 labelled 3D joints in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSet3D {
    pub points: [[f64; 3]; NUM_JOINTS],
    pub frame: Frame,
}

impl JointSet3D {
    pub fn new(points: [[f64; 3]; NUM_JOINTS], frame: Frame) -> Result<Self, HandModelError> {
        let set = Self { points, frame };
        set.validate()?;
        Ok(set)
    }

    pub fn from_slice(points: &[[f64; 3]], frame: Frame) -> Result<Self, HandModelError> {
        let points: [[f64; 3]; NUM_JOINTS] =
            points.try_into().map_err(|_| HandModelError::Dimension {
                field: "joints",
                found: points.len(),
                expected: NUM_JOINTS,
            })?;
        Self::new(points, frame)
    }

    pub fn validate(&self) -> Result<(), HandModelError> {
        match self.points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            Some(index) => Err(HandModelError::NonFinite {
                field: "joints",
                index,
            }),
            None => Ok(()),
        }
    }

    pub fn point(&self, k: usize) -> Vector3<f64> {
        Vector3::from(self.points[k])
    }

    /// Mean Euclidean distance between corresponding joints, mm.
    pub fn mean_distance(&self, other: &JointSet3D) -> f64 {
        (0..NUM_JOINTS).map(|k| (self.point(k) - other.point(k)).norm()).sum::<f64>() / NUM_JOINTS as f64
    }
}

/// Rest-pose skeleton geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTemplate {
    /// Parent of each joint; `None` for the wrist.
    pub parents: Vec<Option<usize>>,
    /// Wrist → finger base joint offset per finger, hand frame, mm.
    pub metacarpals: [[f64; 3]; NUM_FINGERS],
    /// Axis-angle rotation from each finger's rest frame to the hand frame.
    pub rest_rotations: [[f64; 3]; NUM_FINGERS],
    /// base→middle, middle→distal, distal→tip lengths per finger, mm.
    pub segment_lengths: [[f64; 3]; NUM_FINGERS],
    /// Rotation axis of every articulation, expressed in its parent frame.
    pub dof_axes: [[f64; 3]; NUM_ARTICULATIONS],
}

/// The canonical parent table of the 21-joint layout.
pub fn canonical_parents() -> Vec<Option<usize>> {
    let mut parents = vec![None; NUM_JOINTS];
    for f in 0..NUM_FINGERS {
        let j = finger_joints(f);
        parents[j[0]] = Some(WRIST);
        parents[j[1]] = Some(j[0]);
        parents[j[2]] = Some(j[1]);
        parents[j[3]] = Some(j[2]);
    }
    parents
}

impl SkeletonTemplate {
    pub fn validate(&self) -> Result<(), HandModelError> {
        let bad = |m: String| Err(HandModelError::Template(m));
        if self.parents.len() != NUM_JOINTS {
            return bad(format!("{} parent entries, expected {NUM_JOINTS}", self.parents.len()));
        }
        if self.parents[WRIST].is_some() {
            return bad("the wrist must be the root".into());
        }
        for (k, p) in self.parents.iter().enumerate().skip(1) {
            // every chain must reach the wrist without revisiting a joint
            let mut cur = k;
            let mut steps = 0;
            let Some(_) = p else {
                return bad(format!("joint {k} has no parent"));
            };
            while let Some(parent) = self.parents[cur] {
                if parent >= NUM_JOINTS {
                    return bad(format!("joint {cur} has out-of-range parent {parent}"));
                }
                cur = parent;
                steps += 1;
                if steps > NUM_JOINTS {
                    return bad(format!("parent cycle through joint {k}"));
                }
            }
        }
        if self.parents != canonical_parents() {
            return bad("parent table differs from the wrist + 5×4 finger-chain layout".into());
        }
        for f in 0..NUM_FINGERS {
            let m = Vector3::from(self.metacarpals[f]).norm();
            if !(m > 0.0) {
                return bad(format!("finger {f} metacarpal has zero length"));
            }
            if let Some(s) = self.segment_lengths[f].iter().position(|l| !(*l > 0.0)) {
                return bad(format!("finger {f} segment {s} length must be positive"));
            }
            if self.rest_rotations[f].iter().any(|x| !x.is_finite()) {
                return bad(format!("finger {f} rest rotation is not finite"));
            }
        }
        for (j, a) in self.dof_axes.iter().enumerate() {
            let n = Vector3::from(*a).norm();
            if !((n - 1.0).abs() < 1e-6) {
                return bad(format!("dof axis {j} is not a unit vector"));
            }
        }
        Ok(())
    }

    /// Joint positions of the rest pose (all angles zero, unit scales,
    /// identity global pose).
    pub fn rest_joints(&self) -> JointSet3D {
        forward_kinematics_unchecked(&HandParams::default(), self)
    }

    /// Positions of the joints that do not depend on articulation (wrist and
    /// the five finger bases), in the hand frame, for the given scales.
    pub fn palm_points(&self, gamma: &[f64; NUM_FINGERS]) -> Vec<(usize, Vector3<f64>)> {
        let mut out = vec![(WRIST, Vector3::zeros())];
        for f in 0..NUM_FINGERS {
            out.push((finger_joints(f)[0], Vector3::from(self.metacarpals[f]) * gamma[f]));
        }
        out
    }

    fn rest_rotation(&self, f: usize) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(Vector3::from(self.rest_rotations[f]))
    }

    fn axis(&self, dof: usize) -> Unit<Vector3<f64>> {
        Unit::new_normalize(Vector3::from(self.dof_axes[dof]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// `c` per articulation outside its range.
    Hard,
    /// `c · hinge²`, differentiable, used inside the optimizer.
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: [f64; NUM_ARTICULATIONS],
    pub upper: [f64; NUM_ARTICULATIONS],
    pub penalty_weight: f64,
    pub mode: PenaltyMode,
}

impl JointLimits {
    pub fn validate(&self) -> Result<(), HandModelError> {
        for j in 0..NUM_ARTICULATIONS {
            if !(self.lower[j] < self.upper[j]) {
                return Err(HandModelError::Limits(format!(
                    "articulation {j}: lower {} is not below upper {}",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        if !(self.penalty_weight > 0.0) {
            return Err(HandModelError::Limits("penalty weight must be positive".into()));
        }
        Ok(())
    }

    /// Distance of `theta` beyond the violated bound, zero inside.
    pub fn hinge(&self, j: usize, theta: f64) -> f64 {
        if theta > self.upper[j] {
            theta - self.upper[j]
        } else if theta < self.lower[j] {
            self.lower[j] - theta
        } else {
            0.0
        }
    }

    pub fn clamp(&self, theta: &mut [f64; NUM_ARTICULATIONS]) {
        for (j, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[j], self.upper[j]);
        }
    }

    pub fn with_mode(&self, mode: PenaltyMode) -> Self {
        Self { mode, ..self.clone() }
    }
}

/// Template and limits as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandModelFile {
    pub template: SkeletonTemplate,
    pub limits: JointLimits,
}

const DEFAULT_HAND: &str = include_str!("../data/default_hand.json");

impl HandModelFile {
    pub fn from_json(text: &str) -> Result<Self, HandModelError> {
        let file: Self =
            serde_json::from_str(text).map_err(|e| HandModelError::Parse(e.to_string()))?;
        file.template.validate()?;
        file.limits.validate()?;
        Ok(file)
    }

    /// The bundled adult template and anatomical limits.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_HAND).expect("bundled hand model is valid")
    }
}

/// World-frame joint positions for `params`.
pub fn forward_kinematics(
    params: &HandParams,
    template: &SkeletonTemplate,
) -> Result<JointSet3D, HandModelError> {
    params.validate()?;
    template.validate()?;
    Ok(forward_kinematics_unchecked(params, template))
}

/// [`forward_kinematics`] without input validation, for inner loops that
/// validated once up front.
pub fn forward_kinematics_unchecked(params: &HandParams, template: &SkeletonTemplate) -> JointSet3D {
    let global = params.rotation();
    let origin = params.translation();
    let mut points = [[0.0; 3]; NUM_JOINTS];
    points[WRIST] = origin.into();
    for f in 0..NUM_FINGERS {
        let scale = params.gamma[f];
        let joints = finger_joints(f);
        let dof = 4 * f;
        let lengths = template.segment_lengths[f];

        let mut p = origin + global * (Vector3::from(template.metacarpals[f]) * scale);
        points[joints[0]] = p.into();

        let mut rot = global
            * template.rest_rotation(f)
            * Rotation3::from_axis_angle(&template.axis(dof + 1), params.theta[dof + 1])
            * Rotation3::from_axis_angle(&template.axis(dof), params.theta[dof]);
        p += rot * (BONE * (scale * lengths[0]));
        points[joints[1]] = p.into();

        rot *= Rotation3::from_axis_angle(&template.axis(dof + 2), params.theta[dof + 2]);
        p += rot * (BONE * (scale * lengths[1]));
        points[joints[2]] = p.into();

        rot *= Rotation3::from_axis_angle(&template.axis(dof + 3), params.theta[dof + 3]);
        p += rot * (BONE * (scale * lengths[2]));
        points[joints[3]] = p.into();
    }
    JointSet3D {
        points,
        frame: Frame::World,
    }
}

/// Articulation angles that reproduce the given hand-frame joint positions,
/// assuming the template's axes form the usual orthogonal flexion/abduction
/// pairs. Fingers whose axes do not fit that pattern get zero angles.
pub fn inverse_articulation(
    template: &SkeletonTemplate,
    hand_frame_joints: &[Option<Vector3<f64>>; NUM_JOINTS],
) -> [f64; NUM_ARTICULATIONS] {
    let mut theta = [0.0; NUM_ARTICULATIONS];
    for f in 0..NUM_FINGERS {
        let dof = 4 * f;
        let abd = template.axis(dof + 1).into_inner();
        let flex = template.axis(dof).into_inner();
        let c = flex.cross(&BONE);
        let sign = abd.dot(&c);
        let orthogonal = flex.dot(&BONE).abs() < 1e-9 && (sign.abs() - 1.0).abs() < 1e-9;
        let single_ok = |a: usize| template.axis(a).dot(&BONE).abs() < 1e-9;
        if !orthogonal || !single_ok(dof + 2) || !single_ok(dof + 3) {
            continue;
        }
        let joints = finger_joints(f);
        let pts: Vec<Option<Vector3<f64>>> = joints.iter().map(|&k| hand_frame_joints[k]).collect();
        let dir = |a: usize, b: usize| match (pts[a], pts[b]) {
            (Some(pa), Some(pb)) if (pb - pa).norm() > 1e-9 => Some((pb - pa).normalize()),
            _ => None,
        };
        let rest = template.rest_rotation(f);

        let mut frame = rest;
        if let Some(d_world) = dir(0, 1) {
            let d = rest.inverse() * d_world;
            let s = (sign * abd.dot(&d)).clamp(-1.0, 1.0);
            let side = abd.cross(&BONE);
            let best = [s.asin(), std::f64::consts::PI - s.asin()]
                .into_iter()
                .map(|beta| {
                    let cb = beta.cos();
                    let alpha = if cb.abs() < 1e-12 {
                        0.0
                    } else {
                        (d.dot(&side) / cb).atan2(d.dot(&BONE) / cb)
                    };
                    (beta, alpha)
                })
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap_or((0.0, 0.0));
            theta[dof] = best.0;
            theta[dof + 1] = best.1;
        }
        frame = frame
            * Rotation3::from_axis_angle(&template.axis(dof + 1), theta[dof + 1])
            * Rotation3::from_axis_angle(&template.axis(dof), theta[dof]);
        for (seg, a) in [(1usize, dof + 2), (2, dof + 3)] {
            if let Some(d_world) = dir(seg, seg + 1) {
                let d = frame.inverse() * d_world;
                let axis = template.axis(a).into_inner();
                theta[a] = d.dot(&axis.cross(&BONE)).atan2(d.dot(&BONE));
            }
            frame *= Rotation3::from_axis_angle(&template.axis(a), theta[a]);
        }
    }
    theta
}

/// Joint-limit loss in the mode configured on `limits`.
pub fn limit_penalty(params: &HandParams, limits: &JointLimits) -> f64 {
    limit_penalty_mode(params, limits, limits.mode)
}

pub fn limit_penalty_mode(params: &HandParams, limits: &JointLimits, mode: PenaltyMode) -> f64 {
    let c = limits.penalty_weight;
    match mode {
        PenaltyMode::Hard => {
            c * params
                .theta
                .iter()
                .enumerate()
                .filter(|(j, t)| limits.hinge(*j, **t) > 0.0)
                .count() as f64
        }
        PenaltyMode::Smooth => {
            c * params
                .theta
                .iter()
                .enumerate()
                .map(|(j, t)| limits.hinge(j, *t).powi(2))
                .sum::<f64>()
        }
    }
}

/// Gradient of the smooth penalty with respect to `theta`.
pub fn smooth_penalty_gradient(params: &HandParams, limits: &JointLimits) -> [f64; NUM_ARTICULATIONS] {
    let mut g = [0.0; NUM_ARTICULATIONS];
    for (j, &t) in params.theta.iter().enumerate() {
        let h = limits.hinge(j, t);
        if h > 0.0 {
            let dir = if t > limits.upper[j] { 1.0 } else { -1.0 };
            g[j] = 2.0 * limits.penalty_weight * h * dir;
        }
    }
    g
}

/// Residuals whose squares sum to the smooth penalty.
pub fn penalty_residuals<'a>(theta: &'a [f64], limits: &'a JointLimits) -> impl Iterator<Item = f64> + 'a {
    let w = limits.penalty_weight.sqrt();
    theta.iter().enumerate().map(move |(j, t)| w * limits.hinge(j, *t))
}

/// Articulations outside their limits, ascending.
pub fn validate_limits(params: &HandParams, limits: &JointLimits) -> Vec<usize> {
    params
        .theta
        .iter()
        .enumerate()
        .filter(|(j, t)| limits.hinge(*j, **t) > 0.0)
        .map(|(j, _)| j)
        .collect()
}
