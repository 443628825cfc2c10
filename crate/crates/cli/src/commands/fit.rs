use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use siamhand::hand_model::HandModelFile;
use siamhand::jsonio::{read_jsonl, write_jsonl};
use siamhand::skeleton_fitter::{FitConfig, FitError, FitStatus, InitStrategy};
use siamhand::synth_oracle::{fit_scene, SceneFit, SceneRecord, SCENE_SCHEMA_VERSION};

use crate::error::{data_error, Classify, CliResult};
use crate::run::{require_input, with_pool, Common, RunConfig, RunDir};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub fit: FitConfig,
    pub init: InitStrategy,
}

#[derive(Debug, Serialize)]
struct Summary {
    scenes: usize,
    fitted: usize,
    converged: usize,
    rejected_by_gate: usize,
    /// Scenes with too few triangulated joints to initialize.
    skipped: Vec<u64>,
    mean_3d_error_mm: Option<f64>,
    max_3d_error_mm: Option<f64>,
}

pub fn run(common: &Common, input: &Path) -> CliResult<()> {
    let cfg = RunConfig::<FitSettings>::resolve(common)?;
    cfg.settings.fit.validate().config()?;
    require_input(input)?;
    let scenes: Vec<SceneRecord> = read_jsonl(input).data()?;
    if let Some(s) = scenes.iter().find(|s| s.schema_version != SCENE_SCHEMA_VERSION) {
        return Err(data_error(format!(
            "scene {} has schema version {}, expected {SCENE_SCHEMA_VERSION}",
            s.scene_id, s.schema_version
        )));
    }
    let dir = RunDir::create(&common.out, "fit", &cfg, &[input])?;
    let hand = HandModelFile::builtin();
    let settings = &cfg.settings;
    let results: Vec<Result<Option<SceneFit>, String>> = with_pool(cfg.jobs, || {
        scenes
            .par_iter()
            .map(|rec| match fit_scene(rec, &hand.template, &hand.limits, settings.init, &settings.fit) {
                Ok(f) => Ok(Some(f)),
                Err(FitError::InsufficientTriangulation { .. }) => Ok(None),
                Err(e) => Err(format!("scene {}: {e}", rec.scene_id)),
            })
            .collect()
    })?;
    let results: Vec<Option<SceneFit>> = results.into_iter().collect::<Result<_, _>>().map_err(data_error)?;
    let fits: Vec<&SceneFit> = results.iter().flatten().collect();
    write_jsonl(&dir.path("fits.jsonl"), fits.iter().copied()).data()?;

    let errors: Vec<f64> = fits.iter().map(|f| f.mean_joint_error_mm).collect();
    dir.write_json(
        "summary.json",
        &Summary {
            scenes: scenes.len(),
            fitted: fits.len(),
            converged: fits.iter().filter(|f| f.result.status == FitStatus::Converged).count(),
            rejected_by_gate: fits.iter().filter(|f| f.result.status == FitStatus::RejectedByGate).count(),
            skipped: scenes
                .iter()
                .zip(&results)
                .filter(|(_, r)| r.is_none())
                .map(|(s, _)| s.scene_id)
                .collect(),
            mean_3d_error_mm: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
            max_3d_error_mm: errors.iter().copied().reduce(f64::max),
        },
    )
}
