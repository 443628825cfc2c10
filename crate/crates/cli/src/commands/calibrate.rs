use std::path::Path;

use serde::{Deserialize, Serialize};
use siamhand::camera_geometry::{
    estimate_marker_pose, ransac_pose_consensus, CameraModel, Intrinsics, MarkerCubeSpec, MarkerDetection,
    MarkerHypothesis, RansacConfig,
};
use siamhand::jsonio::read_json;
use siamhand::rng;

use crate::error::{Classify, CliResult};
use crate::run::{require_input, Common, RunConfig, RunDir};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSettings {
    pub ransac: RansacConfig,
}

/// Detections of one marker cube seen by several cameras.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationInput {
    pub cube: MarkerCubeSpec,
    pub cameras: Vec<CameraDetections>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDetections {
    pub name: String,
    pub intrinsics: Intrinsics,
    pub detections: Vec<MarkerDetection>,
}

#[derive(Debug, Serialize)]
struct CalibratedCamera {
    name: String,
    camera: Option<CameraModel>,
    inlier_ids: Vec<u32>,
    rms_px: Option<f64>,
    hypotheses: usize,
    /// Markers whose single-marker pose could not be estimated.
    rejected: Vec<(u32, String)>,
    error: Option<String>,
}

pub fn run(common: &Common, input: &Path) -> CliResult<()> {
    let cfg = RunConfig::<CalibrateSettings>::resolve(common)?;
    require_input(input)?;
    let data: CalibrationInput = read_json(input).data()?;
    data.cube.validate().data()?;
    let dir = RunDir::create(&common.out, "calibrate", &cfg, &[input])?;

    let mut out = Vec::with_capacity(data.cameras.len());
    for (index, cam) in data.cameras.iter().enumerate() {
        cam.intrinsics.validate().data()?;
        let mut hyps = Vec::new();
        let mut rejected = Vec::new();
        for det in &cam.detections {
            match estimate_marker_pose(det, &data.cube, &cam.intrinsics) {
                Ok(est) => hyps.push(MarkerHypothesis {
                    pose: est.extrinsic,
                    detection: det.clone(),
                }),
                Err(e) => rejected.push((det.id, e.to_string())),
            }
        }
        let mut r = rng::item_stream(cfg.seed, "calibrate", index as u64);
        let consensus = ransac_pose_consensus(&hyps, &data.cube, &cam.intrinsics, &cfg.settings.ransac, &mut r);
        out.push(match consensus {
            Ok(c) => CalibratedCamera {
                name: cam.name.clone(),
                camera: Some(CameraModel::new(cam.intrinsics, c.pose).data()?),
                inlier_ids: c.inlier_ids,
                rms_px: Some(c.rms_px),
                hypotheses: hyps.len(),
                rejected,
                error: None,
            },
            Err(e) => CalibratedCamera {
                name: cam.name.clone(),
                camera: None,
                inlier_ids: Vec::new(),
                rms_px: None,
                hypotheses: hyps.len(),
                rejected,
                error: Some(e.to_string()),
            },
        });
    }
    dir.write_json("cameras.json", &out)?;
    let failed: Vec<&str> = out.iter().filter(|c| c.camera.is_none()).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(crate::error::data_error(format!("no consensus for cameras {failed:?}")));
    }
    Ok(())
}
