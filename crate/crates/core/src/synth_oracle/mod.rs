//! Synthetic scenes standing in for a learned keypoint detector.
//!
//! The detector is a per-joint pixel bias plus Gaussian noise, with lower
//! confidence and extra scatter on occluded joints. Occluders are the line
//! linkages and circles used for occlusion augmentation, drawn in image
//! space per view.

mod bootstrap;
mod recovery;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::camera_geometry::{CameraModel, GeometryError, Intrinsics};
use crate::geometry2d::{convex_hull, dilate_convex, distance_to_segment, Point2};
use crate::hand_model::{
    forward_kinematics, HandModelError, HandParams, JointLimits, JointSet3D, SkeletonTemplate, NUM_FINGERS,
    NUM_JOINTS,
};
use crate::skeleton_fitter::{FitError, JointObservation, ViewObservation};

pub use bootstrap::{bootstrap_loop, BootstrapConfig, BootstrapReport, BootstrapStatus, RoundReport};
pub use recovery::{fit_scene, SceneFit};

pub const SCENE_SCHEMA_VERSION: u32 = 1;
/// Views seeing fewer joints than this are dropped.
pub const MIN_VISIBLE_JOINTS: usize = 4;
const MAX_POSE_ATTEMPTS: usize = 1000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("joint {joint} is behind camera {view}")]
    BehindCamera { view: usize, joint: usize },
    #[error("no pose with every joint in front of every camera after {0} attempts")]
    NoValidPose(usize),
    #[error(transparent)]
    Hand(#[from] HandModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    /// Per-joint pixel bias.
    pub bias: Vec<[f64; 2]>,
    /// Standard deviation of the pixel noise.
    pub sigma: f64,
    pub omega_base: f64,
    /// Confidence subtracted from occluded joints.
    pub occlusion_penalty: f64,
    /// Occluded joints get extra noise with this multiple of `sigma`.
    pub occluded_sigma_factor: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            bias: vec![[0.0; 2]; NUM_JOINTS],
            sigma: 1.0,
            omega_base: 1.0,
            occlusion_penalty: 0.5,
            occluded_sigma_factor: 3.0,
        }
    }
}

impl DetectorModel {
    /// No bias, no noise, full confidence.
    pub fn ideal() -> Self {
        Self {
            sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn with_uniform_bias(mut self, bias: [f64; 2]) -> Self {
        self.bias = vec![bias; NUM_JOINTS];
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.bias.len() != NUM_JOINTS {
            return Err(SynthError::Config(format!("detector bias has {} joints", self.bias.len())));
        }
        if self.bias.iter().flatten().any(|b| !b.is_finite()) {
            return Err(SynthError::Config("detector bias must be finite".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SynthError::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.omega_base) {
            return Err(SynthError::Config("omega_base must lie in [0, 1]".into()));
        }
        if !(self.occlusion_penalty >= 0.0 && self.occluded_sigma_factor >= 0.0) {
            return Err(SynthError::Config("occlusion penalty and sigma factor must be non-negative".into()));
        }
        Ok(())
    }

    /// Mean Euclidean length of the per-joint bias.
    pub fn bias_norm(&self) -> f64 {
        self.bias.iter().map(|b| b[0].hypot(b[1])).sum::<f64>() / self.bias.len().max(1) as f64
    }

    pub fn confidence(&self, occluded: bool) -> f64 {
        let penalty = if occluded { self.occlusion_penalty } else { 0.0 };
        (self.omega_base - penalty).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionSpec {
    pub lines: usize,
    /// Stroke width range in pixels.
    pub line_width: [f64; 2],
    pub circles: usize,
    /// Circle radius range in pixels.
    pub radius: [f64; 2],
    /// Circle centres are drawn from the joints' bounding box grown by this
    /// many pixels.
    pub center_margin: f64,
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        Self {
            lines: 1,
            line_width: [8.0, 20.0],
            circles: 1,
            radius: [15.0, 40.0],
            center_margin: 10.0,
        }
    }
}

impl OcclusionSpec {
    pub fn none() -> Self {
        Self {
            lines: 0,
            circles: 0,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0 && self.circles == 0
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, [lo, hi]) in [("line_width", self.line_width), ("radius", self.radius)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(SynthError::Config(format!("{name} range [{lo}, {hi}] must be positive and ordered")));
            }
        }
        if !(self.center_margin >= 0.0) {
            return Err(SynthError::Config("center_margin must be non-negative".into()));
        }
        Ok(())
    }
}

/// An image-space occluder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Occluder {
    Line { a: Point2, b: Point2, width: f64 },
    Circle { center: Point2, radius: f64 },
}

impl Occluder {
    /// Whether `p` is within the stroke's half width or inside the circle.
    pub fn covers(&self, p: Point2) -> bool {
        match *self {
            Occluder::Line { a, b, width } => distance_to_segment(p, a, b) <= width / 2.0,
            Occluder::Circle { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) <= radius,
        }
    }
}

pub fn occlusion_flags(joints2d: &[Point2], occluders: &[Occluder]) -> Vec<bool> {
    joints2d.iter().map(|p| occluders.iter().any(|o| o.covers(*p))).collect()
}

/// Draws occluders around the given joint pixels and flags the joints they
/// cover. Line linkages join two distinct random joints.
pub fn gen_occlusion<R: Rng + ?Sized>(
    joints2d: &[Point2],
    spec: &OcclusionSpec,
    rng: &mut R,
) -> (Vec<Occluder>, Vec<bool>) {
    let mut occluders = Vec::with_capacity(spec.lines + spec.circles);
    if joints2d.len() >= 2 {
        for _ in 0..spec.lines {
            let picked = rand::seq::index::sample(rng, joints2d.len(), 2);
            let width = uniform(rng, spec.line_width);
            occluders.push(Occluder::Line {
                a: joints2d[picked.index(0)],
                b: joints2d[picked.index(1)],
                width,
            });
        }
    }
    if !joints2d.is_empty() {
        let (lo, hi) = bounding_box(joints2d);
        let m = spec.center_margin;
        for _ in 0..spec.circles {
            let center = [uniform(rng, [lo[0] - m, hi[0] + m]), uniform(rng, [lo[1] - m, hi[1] + m])];
            let radius = uniform(rng, spec.radius);
            occluders.push(Occluder::Circle { center, radius });
        }
    }
    let flags = occlusion_flags(joints2d, &occluders);
    (occluders, flags)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn bounding_box(points: &[Point2]) -> (Point2, Point2) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSamplerConfig {
    /// Maximum angle between the sampled and the canonical hand orientation.
    pub cone_degrees: f64,
    /// Canonical orientation (axis-angle); identity puts the palm toward
    /// cameras on the +z side with fingers along +y.
    pub canonical_rotation: [f64; 3],
    pub translation_center: [f64; 3],
    pub translation_half_extent: [f64; 3],
    /// Finger scales are drawn uniformly from this range.
    pub gamma_range: [f64; 2],
}

impl Default for PoseSamplerConfig {
    fn default() -> Self {
        Self {
            cone_degrees: 60.0,
            canonical_rotation: [0.0; 3],
            translation_center: [0.0; 3],
            translation_half_extent: [30.0; 3],
            gamma_range: [1.0, 1.0],
        }
    }
}

impl PoseSamplerConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.cone_degrees >= 0.0 && self.cone_degrees <= 180.0) {
            return Err(SynthError::Config("cone_degrees must lie in [0, 180]".into()));
        }
        if self.translation_half_extent.iter().any(|h| !(*h >= 0.0)) {
            return Err(SynthError::Config("translation_half_extent must be non-negative".into()));
        }
        let [lo, hi] = self.gamma_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(SynthError::Config("gamma_range must be positive and ordered".into()));
        }
        Ok(())
    }
}

/// Draws a hand pose: articulation uniform within the limits, orientation
/// uniform (in the rotation-invariant sense) within the cone around the
/// canonical orientation, translation uniform in the box.
pub fn sample_pose<R: Rng + ?Sized>(limits: &JointLimits, config: &PoseSamplerConfig, rng: &mut R) -> HandParams {
    let mut params = HandParams::default();
    for (j, t) in params.theta.iter_mut().enumerate() {
        *t = rng.random_range(limits.lower[j]..=limits.upper[j]);
    }
    for g in params.gamma.iter_mut() {
        *g = uniform(rng, config.gamma_range);
    }
    let max_angle = config.cone_degrees.to_radians();
    // uniform rotations have angle density ∝ 1 − cos θ
    let angle = if max_angle > 0.0 {
        let envelope = 1.0 - max_angle.cos();
        loop {
            let a = rng.random_range(0.0..=max_angle);
            if rng.random::<f64>() * envelope <= 1.0 - a.cos() {
                break a;
            }
        }
    } else {
        0.0
    };
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let rotation = Rotation3::from_scaled_axis(Vector3::from(config.canonical_rotation))
        * Rotation3::from_scaled_axis(Vector3::from(axis) * angle);
    let translation = Vector3::from_fn(|d, _| {
        let h = config.translation_half_extent[d];
        config.translation_center[d] + if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 }
    });
    params.set_global(&rotation, &translation);
    params
}

/// Three cameras around the hand workspace: one above the fingers and one
/// to each side.
pub fn default_rig() -> Vec<CameraModel> {
    let intrinsics = Intrinsics {
        fx: 800.0,
        fy: 800.0,
        cx: 640.0,
        cy: 480.0,
        width: 1280,
        height: 960,
    };
    let target = Vector3::new(0.0, 60.0, 0.0);
    let down = Vector3::new(0.0, -1.0, 0.0);
    [
        Vector3::new(0.0, -250.0, 450.0),
        Vector3::new(420.0, 60.0, 300.0),
        Vector3::new(-420.0, 60.0, 300.0),
    ]
    .iter()
    .map(|c| CameraModel::look_at(intrinsics, *c, target, down).expect("default rig is valid"))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: HandParams,
    pub joints: JointSet3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub schema_version: u32,
    pub scene_id: u64,
    pub ground_truth: GroundTruth,
    pub rig: Vec<CameraModel>,
    /// Rendered views; views that saw too few joints are left out.
    pub views: Vec<ViewObservation>,
    /// Occluders per entry of `views`.
    pub occluders: Vec<Vec<Occluder>>,
    /// Occlusion flags per entry of `views`, per joint.
    pub occluded: Vec<Vec<bool>>,
    pub dropped_views: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SceneRecord {
    pub fn has_occlusion(&self) -> bool {
        self.occluded.iter().flatten().any(|f| *f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Hand mask = convex hull of the projected joints grown by this margin.
    pub mask_margin_px: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { mask_margin_px: 10.0 }
    }
}

/// Projects the ground truth into every camera, draws occluders from `occ`
/// and simulates the detector.
#[allow(clippy::too_many_arguments)]
pub fn render_detections<R: Rng + ?Sized>(
    scene_id: u64,
    gt: &HandParams,
    rig: &[CameraModel],
    template: &SkeletonTemplate,
    detector: &DetectorModel,
    occ: &OcclusionSpec,
    render: &RenderConfig,
    rng: &mut R,
) -> Result<SceneRecord, SynthError> {
    occ.validate()?;
    render_scene(scene_id, gt, rig, template, detector, render, rng, |_, pixels, rng| {
        if occ.is_empty() {
            Vec::new()
        } else {
            gen_occlusion(pixels, occ, rng).0
        }
    })
}

/// [`render_detections`] with fixed occluders per rig camera.
#[allow(clippy::too_many_arguments)]
pub fn render_with_occluders<R: Rng + ?Sized>(
    scene_id: u64,
    gt: &HandParams,
    rig: &[CameraModel],
    template: &SkeletonTemplate,
    detector: &DetectorModel,
    occluders: &[Vec<Occluder>],
    render: &RenderConfig,
    rng: &mut R,
) -> Result<SceneRecord, SynthError> {
    if occluders.len() != rig.len() {
        return Err(SynthError::Config(format!(
            "{} occluder lists for {} cameras",
            occluders.len(),
            rig.len()
        )));
    }
    render_scene(scene_id, gt, rig, template, detector, render, rng, |view, _, _| occluders[view].clone())
}

#[allow(clippy::too_many_arguments)]
fn render_scene<R, F>(
    scene_id: u64,
    gt: &HandParams,
    rig: &[CameraModel],
    template: &SkeletonTemplate,
    detector: &DetectorModel,
    render: &RenderConfig,
    rng: &mut R,
    mut occluders_for: F,
) -> Result<SceneRecord, SynthError>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &[Point2], &mut R) -> Vec<Occluder>,
{
    detector.validate()?;
    if rig.is_empty() {
        return Err(SynthError::Config("rig has no cameras".into()));
    }
    for cam in rig {
        cam.validate()?;
    }
    let joints = forward_kinematics(gt, template)?;
    let mut projected: Vec<Vec<Point2>> = Vec::with_capacity(rig.len());
    for (view, cam) in rig.iter().enumerate() {
        let mut px = Vec::with_capacity(NUM_JOINTS);
        for (joint, p) in joints.points.iter().enumerate() {
            px.push(cam.project(p).map_err(|_| SynthError::BehindCamera { view, joint })?);
        }
        projected.push(px);
    }

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut record = SceneRecord {
        schema_version: SCENE_SCHEMA_VERSION,
        scene_id,
        ground_truth: GroundTruth {
            params: gt.clone(),
            joints,
        },
        rig: rig.to_vec(),
        views: Vec::new(),
        occluders: Vec::new(),
        occluded: Vec::new(),
        dropped_views: Vec::new(),
        warnings: Vec::new(),
    };
    for (view, cam) in rig.iter().enumerate() {
        let pixels = &projected[view];
        let occluders = occluders_for(view, pixels, rng);
        let flags = occlusion_flags(pixels, &occluders);
        let seen: Vec<bool> = pixels.iter().map(|p| cam.intrinsics.contains(*p)).collect();
        let mut obs: Vec<JointObservation> = Vec::with_capacity(NUM_JOINTS);
        for k in 0..NUM_JOINTS {
            let mut sd = detector.sigma;
            if flags[k] {
                sd = detector.sigma * (1.0 + detector.occluded_sigma_factor.powi(2)).sqrt();
            }
            // draw both coordinates every time so streams stay aligned
            let n = [noise.sample(rng), noise.sample(rng)];
            let pixel = [
                pixels[k][0] + detector.bias[k][0] + sd * n[0],
                pixels[k][1] + detector.bias[k][1] + sd * n[1],
            ];
            let confidence = if seen[k] { detector.confidence(flags[k]) } else { 0.0 };
            obs.push(JointObservation::new(pixel, confidence));
        }
        let visible = seen.iter().filter(|s| **s).count();
        if visible < MIN_VISIBLE_JOINTS {
            record.dropped_views.push(view);
            record
                .warnings
                .push(format!("view {view} sees {visible} joints, fewer than {MIN_VISIBLE_JOINTS}; dropped"));
            continue;
        }
        let mask = dilate_convex(&convex_hull(pixels), render.mask_margin_px);
        let mut observation = ViewObservation {
            view,
            camera: *cam,
            joints: obs,
            mask: Some(mask),
        };
        observation.apply_mask()?;
        record.views.push(observation);
        record.occluders.push(occluders);
        record.occluded.push(flags);
    }
    Ok(record)
}

/// Samples poses until one projects in front of every camera, then renders
/// it.
#[allow(clippy::too_many_arguments)]
pub fn generate_scene<R: Rng + ?Sized>(
    scene_id: u64,
    sampler: &PoseSamplerConfig,
    limits: &JointLimits,
    rig: &[CameraModel],
    template: &SkeletonTemplate,
    detector: &DetectorModel,
    occ: &OcclusionSpec,
    render: &RenderConfig,
    rng: &mut R,
) -> Result<SceneRecord, SynthError> {
    sampler.validate()?;
    for _ in 0..MAX_POSE_ATTEMPTS {
        let gt = sample_pose(limits, sampler, rng);
        match render_detections(scene_id, &gt, rig, template, detector, occ, render, rng) {
            Err(SynthError::BehindCamera { .. }) => continue,
            other => return other,
        }
    }
    Err(SynthError::NoValidPose(MAX_POSE_ATTEMPTS))
}

/// Finger scales of a record, for fits that keep them fixed.
pub fn gamma_of(record: &SceneRecord) -> [f64; NUM_FINGERS] {
    record.ground_truth.params.gamma
}
