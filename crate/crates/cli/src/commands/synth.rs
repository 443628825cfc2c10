use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use siamhand::camera_geometry::CameraModel;
use siamhand::dataset_pairs::{make_pair, write_pairs, SiamesePair};
use siamhand::hand_model::HandModelFile;
use siamhand::jsonio::write_jsonl;
use siamhand::rng;
use siamhand::synth_oracle::{
    default_rig, generate_scene, sample_pose, DetectorModel, OcclusionSpec, PoseSamplerConfig, RenderConfig,
    SceneRecord,
};

use crate::error::{config_error, data_error, Classify, CliResult};
use crate::run::{with_pool, Common, RunConfig, RunDir};

const MAX_PAIR_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub count: usize,
    pub pairs: bool,
    pub sampler: PoseSamplerConfig,
    pub detector: DetectorModel,
    /// Applied to single scenes and to the occluded branch of pairs. When
    /// absent, scenes get no occluders and pairs the standard line and disk.
    pub occlusion: Option<OcclusionSpec>,
    pub render: RenderConfig,
    /// Cameras; the built-in three-camera rig when absent.
    pub rig: Option<Vec<CameraModel>>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            count: 20,
            pairs: false,
            sampler: PoseSamplerConfig::default(),
            detector: DetectorModel::default(),
            occlusion: None,
            render: RenderConfig::default(),
            rig: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    records: usize,
    pairs: bool,
    occluded_joint_fraction: f64,
    dropped_views: usize,
    warnings: Vec<String>,
}

fn occluded_fraction<'a>(records: impl Iterator<Item = &'a SceneRecord>) -> (f64, usize) {
    let (mut hit, mut total, mut dropped) = (0usize, 0usize, 0usize);
    for r in records {
        for flags in &r.occluded {
            hit += flags.iter().filter(|f| **f).count();
            total += flags.len();
        }
        dropped += r.dropped_views.len();
    }
    (if total == 0 { 0.0 } else { hit as f64 / total as f64 }, dropped)
}

pub fn run(common: &Common, count: Option<usize>, pairs: bool, sigma: Option<f64>) -> CliResult<()> {
    let mut cfg = RunConfig::<SynthSettings>::resolve(common)?;
    if let Some(n) = count {
        cfg.settings.count = n;
    }
    cfg.settings.pairs |= pairs;
    if let Some(s) = sigma {
        cfg.settings.detector.sigma = s;
    }
    let s = &cfg.settings;
    if s.count == 0 {
        return Err(config_error("count must be positive"));
    }
    s.sampler.validate().config()?;
    s.detector.validate().config()?;
    let occlusion = s.occlusion.unwrap_or_else(|| if s.pairs { OcclusionSpec::default() } else { OcclusionSpec::none() });
    occlusion.validate().config()?;
    if s.pairs && occlusion.is_empty() {
        return Err(config_error("pairs need a non-empty occlusion spec"));
    }
    let rig = s.rig.clone().unwrap_or_else(default_rig);
    let hand = HandModelFile::builtin();
    let dir = RunDir::create(&common.out, "synth", &cfg, &[])?;
    let seed = cfg.seed;

    if s.pairs {
        let made: Vec<Result<SiamesePair, String>> = with_pool(cfg.jobs, || {
            (0..s.count as u64)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::item_stream(seed, "synth-pairs", i);
                    let mut last = String::new();
                    for _ in 0..MAX_PAIR_ATTEMPTS {
                        let gt = sample_pose(&hand.limits, &s.sampler, &mut r);
                        match make_pair(i, &gt, &rig, &hand.template, &s.detector, &occlusion, &s.render, &mut r) {
                            Ok(p) => return Ok(p),
                            Err(e) => last = e.to_string(),
                        }
                    }
                    Err(format!("pair {i}: {last}"))
                })
                .collect()
        })?;
        let made: Vec<SiamesePair> = made.into_iter().collect::<Result<_, _>>().map_err(data_error)?;
        write_pairs(&dir.path("pairs.jsonl"), &made).data()?;
        let (frac, dropped) = occluded_fraction(made.iter().map(|p| &p.occluded));
        dir.write_json(
            "summary.json",
            &Summary {
                records: made.len(),
                pairs: true,
                occluded_joint_fraction: frac,
                dropped_views: dropped,
                warnings: made.iter().flat_map(|p| p.occluded.warnings.iter().chain(&p.clean.warnings)).cloned().collect(),
            },
        )
    } else {
        let made: Vec<Result<SceneRecord, String>> = with_pool(cfg.jobs, || {
            (0..s.count as u64)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::item_stream(seed, "synth-scenes", i);
                    generate_scene(
                        i,
                        &s.sampler,
                        &hand.limits,
                        &rig,
                        &hand.template,
                        &s.detector,
                        &occlusion,
                        &s.render,
                        &mut r,
                    )
                    .map_err(|e| format!("scene {i}: {e}"))
                })
                .collect()
        })?;
        let made: Vec<SceneRecord> = made.into_iter().collect::<Result<_, _>>().map_err(data_error)?;
        write_jsonl(&dir.path("scenes.jsonl"), &made).data()?;
        let (frac, dropped) = occluded_fraction(made.iter());
        dir.write_json(
            "summary.json",
            &Summary {
                records: made.len(),
                pairs: false,
                occluded_joint_fraction: frac,
                dropped_views: dropped,
                warnings: made.iter().flat_map(|r| r.warnings.iter()).cloned().collect(),
            },
        )
    }
}
