use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{projection_error, reprojection_loss_unchecked, FitError, LossBreakdown, ViewObservation};
use crate::hand_model::{
    forward_kinematics_unchecked, limit_penalty_mode, penalty_residuals, HandParams, JointLimits, PenaltyMode,
    SkeletonTemplate, NUM_ARTICULATIONS, NUM_JOINTS,
};
use crate::lm::{central_difference_jacobian, minimize, LmError, LmSettings, LmStatus};

/// Free parameters: 20 articulations, 3 translations, 3 rotation increments.
pub const NUM_FREE: usize = NUM_ARTICULATIONS + 6;
const ANGLE_STEP: f64 = 1e-5;
const LENGTH_STEP: f64 = 1e-3;
/// Residual magnitude (pixels) standing in for a joint behind its camera.
const BEHIND_CAMERA_PX: f64 = 1e4;
/// Denominator floor of the gradient check's relative error.
const GRADIENT_CHECK_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_damping: f64,
    /// Relative decrease of the optimizer objective below which it stops.
    pub loss_tolerance: f64,
    /// Relative parameter step below which it stops.
    pub step_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Penalty used in the reported loss; the optimizer always uses the
    /// smooth form.
    pub penalty_mode: PenaltyMode,
    /// Frames whose mean per-joint per-view pixel residual exceeds this are
    /// rejected for manual relabelling.
    pub gate_mean_residual_px: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            max_damping: 1e12,
            loss_tolerance: 1e-12,
            step_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            penalty_mode: PenaltyMode::Smooth,
            gate_mean_residual_px: 15.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let positive = [
            ("initial_damping", self.initial_damping),
            ("damping_up", self.damping_up),
            ("damping_down", self.damping_down),
            ("max_damping", self.max_damping),
            ("loss_tolerance", self.loss_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("gradient_tolerance", self.gradient_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FitError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gate_mean_residual_px >= 0.0) {
            return Err(FitError::Config("gate_mean_residual_px must be non-negative".into()));
        }
        if self.max_iterations == 0 {
            return Err(FitError::Config("max_iterations must be positive".into()));
        }
        if !(self.damping_up > 1.0 && self.damping_down < 1.0) {
            return Err(FitError::Config("damping_up must exceed 1 and damping_down be below 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// No damping level produced a decreasing step.
    Stalled,
    RejectedByGate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Optimizer objective: weighted squared pixel error plus smooth penalty.
    pub objective: f64,
    /// Reported total loss at the same parameters.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: HandParams,
    pub loss: LossBreakdown,
    pub iterations: usize,
    pub status: FitStatus,
    /// Pixel distance per view per joint; `None` where the joint has zero
    /// weight or is behind the camera.
    pub residuals: Vec<Vec<Option<f64>>>,
    pub mean_residual_px: Option<f64>,
    pub behind_camera: Vec<(usize, usize)>,
    pub trace: Vec<TraceEntry>,
}

/// The least-squares problem around a fixed reference rotation.
struct Problem<'a> {
    observations: &'a [ViewObservation],
    template: &'a SkeletonTemplate,
    limits: &'a JointLimits,
    base: HandParams,
    sqrt_weights: Vec<Vec<f64>>,
}

impl<'a> Problem<'a> {
    fn new(
        observations: &'a [ViewObservation],
        template: &'a SkeletonTemplate,
        limits: &'a JointLimits,
        base: HandParams,
    ) -> Self {
        let sqrt_weights = observations
            .iter()
            .map(|o| o.joints.iter().map(|j| j.weight().sqrt()).collect())
            .collect();
        Self {
            observations,
            template,
            limits,
            base,
            sqrt_weights,
        }
    }

    fn start(&self) -> DVector<f64> {
        let mut x = DVector::zeros(NUM_FREE);
        x.rows_mut(0, NUM_ARTICULATIONS).copy_from_slice(&self.base.theta);
        x.rows_mut(NUM_ARTICULATIONS, 3).copy_from(&self.base.translation());
        x
    }

    fn steps() -> Vec<f64> {
        Self::scaled_steps(1.0)
    }

    fn scaled_steps(factor: f64) -> Vec<f64> {
        (0..NUM_FREE)
            .map(|i| {
                let in_translation = (NUM_ARTICULATIONS..NUM_ARTICULATIONS + 3).contains(&i);
                factor * if in_translation { LENGTH_STEP } else { ANGLE_STEP }
            })
            .collect()
    }

    fn params(&self, x: &DVector<f64>) -> HandParams {
        let mut p = self.base.clone();
        p.theta.copy_from_slice(x.rows(0, NUM_ARTICULATIONS).as_slice());
        let t = Vector3::new(x[20], x[21], x[22]);
        let r = Rotation3::from_scaled_axis(Vector3::new(x[23], x[24], x[25])) * self.base.rotation();
        p.set_global(&r, &t);
        p
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.params(x);
        let joints = forward_kinematics_unchecked(&p, self.template);
        let mut r = Vec::with_capacity(2 * NUM_JOINTS * self.observations.len() + NUM_ARTICULATIONS);
        for (obs, sw) in self.observations.iter().zip(&self.sqrt_weights) {
            for (k, j) in obs.joints.iter().enumerate() {
                let s = sw[k];
                if s == 0.0 {
                    r.extend([0.0, 0.0]);
                    continue;
                }
                match projection_error(&obs.camera, &joints.points[k], j.pixel) {
                    Some(e) => r.extend([s * e[0], s * e[1]]),
                    None => r.extend([s * BEHIND_CAMERA_PX, s * BEHIND_CAMERA_PX]),
                }
            }
        }
        r.extend(penalty_residuals(&p.theta, self.limits));
        DVector::from_vec(r)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        central_difference_jacobian(&|x: &DVector<f64>| self.residuals(x), x, &Self::steps())
    }

    fn total(&self, x: &DVector<f64>, mode: PenaltyMode) -> f64 {
        let p = self.params(x);
        reprojection_loss_unchecked(&p, self.template, self.observations).value + limit_penalty_mode(&p, self.limits, mode)
    }

    /// Gradient of the reported (smooth-mode) loss from the residual
    /// Jacobian: each term `√w·‖r‖` differentiates to `√w·rᵀJ/‖r‖`, the
    /// penalty `Σp²` to `2·pᵀJ`.
    fn loss_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.residuals(x);
        let jac = self.jacobian(x);
        let mut g = DVector::zeros(NUM_FREE);
        let terms = r.len() - NUM_ARTICULATIONS;
        let flat_sw: Vec<f64> = self.sqrt_weights.iter().flatten().copied().collect();
        for (t, &s) in flat_sw.iter().enumerate() {
            let rows = 2 * t;
            let norm = r[rows].hypot(r[rows + 1]);
            if s == 0.0 || norm == 0.0 {
                continue;
            }
            for c in 0..NUM_FREE {
                g[c] += s * (r[rows] * jac[(rows, c)] + r[rows + 1] * jac[(rows + 1, c)]) / norm;
            }
        }
        for row in terms..r.len() {
            for c in 0..NUM_FREE {
                g[c] += 2.0 * r[row] * jac[(row, c)];
            }
        }
        g
    }
}

fn validate_inputs(
    observations: &[ViewObservation],
    template: &SkeletonTemplate,
    limits: &JointLimits,
    params: &HandParams,
) -> Result<(), FitError> {
    if observations.is_empty() {
        return Err(FitError::NoViews);
    }
    for o in observations {
        o.validate()?;
    }
    template.validate()?;
    limits.validate()?;
    params.validate()?;
    Ok(())
}

/// Levenberg–Marquardt fit of articulation and global pose, starting from
/// `init` (whose finger scales are kept).
pub fn fit(
    observations: &[ViewObservation],
    template: &SkeletonTemplate,
    limits: &JointLimits,
    init: &HandParams,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    validate_inputs(observations, template, limits, init)?;
    config.validate()?;
    let problem = Problem::new(observations, template, limits, init.clone());
    let settings = LmSettings {
        max_iterations: config.max_iterations,
        initial_damping: config.initial_damping,
        damping_up: config.damping_up,
        damping_down: config.damping_down,
        max_damping: config.max_damping,
        cost_tolerance: config.loss_tolerance,
        step_tolerance: config.step_tolerance,
        gradient_tolerance: config.gradient_tolerance,
    };
    let report = minimize(
        |x: &DVector<f64>| problem.residuals(x),
        |x: &DVector<f64>| problem.jacobian(x),
        problem.start(),
        &settings,
    )
    .map_err(|e| match e {
        LmError::NonFiniteStart => FitError::NonFinite,
        other => FitError::Config(other.to_string()),
    })?;

    let params = problem.params(&report.x);
    let reprojection = reprojection_loss_unchecked(&params, template, observations);
    let loss_model = limit_penalty_mode(&params, limits, config.penalty_mode);
    let loss = LossBreakdown {
        total: reprojection.value + loss_model,
        loss_2d: reprojection.value,
        loss_model,
    };
    if !loss.total.is_finite() {
        return Err(FitError::NonFinite);
    }

    let joints = forward_kinematics_unchecked(&params, template);
    let residuals: Vec<Vec<Option<f64>>> = observations
        .iter()
        .map(|o| {
            o.joints
                .iter()
                .enumerate()
                .map(|(k, j)| {
                    if j.weight() == 0.0 {
                        return None;
                    }
                    projection_error(&o.camera, &joints.points[k], j.pixel).map(|e| e[0].hypot(e[1]))
                })
                .collect()
        })
        .collect();
    let active: Vec<f64> = residuals.iter().flatten().flatten().copied().collect();
    let mean_residual_px =
        (!active.is_empty()).then(|| active.iter().sum::<f64>() / active.len() as f64);

    let status = if !mean_residual_px.is_some_and(|m| m <= config.gate_mean_residual_px) {
        FitStatus::RejectedByGate
    } else {
        match report.status {
            LmStatus::Converged => FitStatus::Converged,
            LmStatus::MaxIterations => FitStatus::MaxIterations,
            LmStatus::Stalled => FitStatus::Stalled,
        }
    };
    let trace = report
        .trace
        .iter()
        .zip(&report.iterates)
        .enumerate()
        .map(|(iteration, (&objective, x))| TraceEntry {
            iteration,
            objective,
            loss: problem.total(x, config.penalty_mode),
        })
        .collect();

    Ok(FitResult {
        params,
        loss,
        iterations: report.iterations,
        status,
        residuals,
        mean_residual_px,
        behind_camera: reprojection.behind_camera,
        trace,
    })
}

/// Gradient of the smooth-mode total loss with respect to the fitter's free
/// parameters `[θ (20), translation (3), rotation increment (3)]`, assembled
/// from the same finite-difference residual Jacobian the optimizer uses.
pub fn loss_gradient(
    params: &HandParams,
    template: &SkeletonTemplate,
    observations: &[ViewObservation],
    limits: &JointLimits,
) -> Result<Vec<f64>, FitError> {
    validate_inputs(observations, template, limits, params)?;
    let problem = Problem::new(observations, template, limits, params.clone());
    Ok(problem.loss_gradient(&problem.start()).as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub fitter: Vec<f64>,
    pub reference: Vec<f64>,
}

/// Compares [`loss_gradient`] with Richardson-extrapolated central
/// differences of the total loss, taken at ten and five times the fitter's
/// step sizes. Relative errors use `max(|a|, |b|, 1)` as denominator.
///
/// The loss is a sum of norms, so the comparison is only meaningful when
/// no weighted residual is at or near zero and no joint is behind a camera.
pub fn check_gradient(
    params: &HandParams,
    template: &SkeletonTemplate,
    observations: &[ViewObservation],
    limits: &JointLimits,
) -> Result<GradientCheck, FitError> {
    let fitter = loss_gradient(params, template, observations, limits)?;
    let problem = Problem::new(observations, template, limits, params.clone());
    let x0 = problem.start();
    let steps = Problem::scaled_steps(10.0);
    let mut reference = vec![0.0; NUM_FREE];
    let mut probe = x0.clone();
    let mut central = |i: usize, h: f64| {
        probe[i] = x0[i] + h;
        let plus = problem.total(&probe, PenaltyMode::Smooth);
        probe[i] = x0[i] - h;
        let minus = problem.total(&probe, PenaltyMode::Smooth);
        probe[i] = x0[i];
        (plus - minus) / (2.0 * h)
    };
    // a sum of norms has a large third derivative near small residuals, so
    // plain central differences at these steps are not accurate enough
    for (i, h) in steps.iter().enumerate() {
        reference[i] = (4.0 * central(i, h / 2.0) - central(i, *h)) / 3.0;
    }
    let max_relative_error = fitter
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(GRADIENT_CHECK_FLOOR))
        .fold(0.0, f64::max);
    Ok(GradientCheck {
        max_relative_error,
        fitter,
        reference,
    })
}
