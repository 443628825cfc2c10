use serde::{Deserialize, Serialize};

use super::{fit_scene, render_detections, DetectorModel, OcclusionSpec, RenderConfig, SynthError};
use crate::camera_geometry::CameraModel;
use crate::hand_model::{HandParams, JointLimits, SkeletonTemplate};
use crate::rng;
use crate::skeleton_fitter::{FitConfig, FitError, FitStatus, InitStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub rounds: usize,
    /// Bias shrink rate: `bias ← bias·(1 − alpha·accepted_fraction)`.
    pub alpha: f64,
    /// Fit settings, including the acceptance gate.
    pub fit: FitConfig,
    pub init: InitStrategy,
    pub occlusion: OcclusionSpec,
    pub render: RenderConfig,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            alpha: 0.8,
            fit: FitConfig::default(),
            init: InitStrategy::default(),
            occlusion: OcclusionSpec::none(),
            render: RenderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Mean per-joint bias of the detector used in this round.
    pub bias_norm: f64,
    pub accepted: usize,
    pub accepted_fraction: f64,
    /// Mean 3D joint error of accepted fits, millimetres.
    pub mean_fit_error_mm: Option<f64>,
    /// Mean distance between accepted detections and the reprojected fits
    /// (the pseudo-labels), pixels.
    pub mean_pseudo_label_residual_px: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapStatus {
    Completed,
    /// A round accepted no frame; the loop stopped there.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub status: BootstrapStatus,
    pub rounds: Vec<RoundReport>,
    pub detector: DetectorModel,
}

/// Simulated annotation bootstrapping: each round renders every scene with
/// the current detector, fits it, keeps the frames that pass the gate as
/// pseudo-labels and shrinks the detector bias by the accepted fraction.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_loop(
    scenes: &[HandParams],
    rig: &[CameraModel],
    template: &SkeletonTemplate,
    limits: &JointLimits,
    detector: &DetectorModel,
    config: &BootstrapConfig,
    seed: u64,
) -> Result<BootstrapReport, SynthError> {
    if config.rounds == 0 {
        return Err(SynthError::Config("bootstrap needs at least one round".into()));
    }
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(SynthError::Config("alpha must lie in [0, 1]".into()));
    }
    if scenes.is_empty() {
        return Err(SynthError::Config("bootstrap needs at least one scene".into()));
    }
    config.fit.validate()?;
    let mut detector = detector.clone();
    detector.validate()?;
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut status = BootstrapStatus::Completed;

    for round in 0..config.rounds {
        let stream = format!("bootstrap/{round}");
        let mut accepted = 0usize;
        let mut errors = Vec::new();
        let mut pseudo = Vec::new();
        for (i, gt) in scenes.iter().enumerate() {
            let mut r = rng::item_stream(seed, &stream, i as u64);
            let record = render_detections(i as u64, gt, rig, template, &detector, &config.occlusion, &config.render, &mut r)?;
            let scene = match fit_scene(&record, template, limits, config.init, &config.fit) {
                Ok(scene) => scene,
                Err(FitError::InsufficientTriangulation { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            if scene.result.status == FitStatus::RejectedByGate {
                continue;
            }
            accepted += 1;
            errors.push(scene.mean_joint_error_mm);
            pseudo.extend(scene.result.residuals.iter().flatten().flatten().copied());
        }
        let accepted_fraction = accepted as f64 / scenes.len() as f64;
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        rounds.push(RoundReport {
            round,
            bias_norm: detector.bias_norm(),
            accepted,
            accepted_fraction,
            mean_fit_error_mm: mean(&errors),
            mean_pseudo_label_residual_px: mean(&pseudo),
        });
        if accepted == 0 {
            status = BootstrapStatus::Stalled;
            break;
        }
        let shrink = 1.0 - config.alpha * accepted_fraction;
        for b in detector.bias.iter_mut() {
            b[0] *= shrink;
            b[1] *= shrink;
        }
    }
    Ok(BootstrapReport {
        status,
        rounds,
        detector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::HandModelFile;
    use crate::synth_oracle::{default_rig, sample_pose, PoseSamplerConfig};

    fn poses(n: usize, seed: u64) -> Vec<HandParams> {
        let model = HandModelFile::builtin();
        let mut r = rng::stream(seed, "poses");
        (0..n)
            .map(|_| sample_pose(&model.limits, &PoseSamplerConfig::default(), &mut r))
            .collect()
    }

    fn run(detector: &DetectorModel, config: &BootstrapConfig, seed: u64) -> BootstrapReport {
        let model = HandModelFile::builtin();
        bootstrap_loop(
            &poses(6, seed),
            &default_rig(),
            &model.template,
            &model.limits,
            detector,
            config,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_bias_is_a_fixed_point() {
        let detector = DetectorModel {
            sigma: 0.5,
            ..DetectorModel::default()
        };
        let report = run(&detector, &BootstrapConfig::default(), 1);
        assert_eq!(report.status, BootstrapStatus::Completed);
        assert!(report.rounds.iter().all(|r| r.bias_norm == 0.0));
        assert!(report.rounds.iter().all(|r| r.accepted_fraction == 1.0));
    }

    #[test]
    fn bias_shrinks_every_round() {
        for seed in 0..5 {
            let detector = DetectorModel {
                sigma: 0.5,
                ..DetectorModel::default()
            }
            .with_uniform_bias([8.0 / 2f64.sqrt(), 8.0 / 2f64.sqrt()]);
            let report = run(&detector, &BootstrapConfig::default(), seed);
            assert_eq!(report.rounds.len(), 3);
            assert!((report.rounds[0].bias_norm - 8.0).abs() < 1e-12);
            for w in report.rounds.windows(2) {
                assert!(w[1].bias_norm < w[0].bias_norm, "seed {seed}");
            }
        }
    }

    #[test]
    fn zero_gate_stalls() {
        let config = BootstrapConfig {
            fit: FitConfig {
                gate_mean_residual_px: 0.0,
                ..FitConfig::default()
            },
            ..BootstrapConfig::default()
        };
        let report = run(&DetectorModel::default(), &config, 2);
        assert_eq!(report.status, BootstrapStatus::Stalled);
        assert_eq!(report.rounds.len(), 1);
        assert_eq!(report.rounds[0].accepted, 0);
    }
}
