use serde::{Deserialize, Serialize};
use siamhand::hand_model::HandModelFile;
use siamhand::rng;
use siamhand::skeleton_fitter::FitError;
use siamhand::synth_oracle::{
    bootstrap_loop, default_rig, sample_pose, BootstrapConfig, DetectorModel, PoseSamplerConfig, SynthError,
};

use crate::error::{config_error, Classify, CliError, CliResult};
use crate::run::{Common, RunConfig, RunDir};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub scenes: usize,
    pub sampler: PoseSamplerConfig,
    /// Starting detector; its bias is what the loop shrinks.
    pub detector: DetectorModel,
    pub bootstrap: BootstrapConfig,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            scenes: 30,
            sampler: PoseSamplerConfig::default(),
            detector: DetectorModel::default().with_uniform_bias([4.0, -3.0]),
            bootstrap: BootstrapConfig::default(),
        }
    }
}

pub fn run(common: &Common) -> CliResult<()> {
    let cfg = RunConfig::<BootstrapSettings>::resolve(common)?;
    let s = &cfg.settings;
    if s.scenes == 0 {
        return Err(config_error("scenes must be positive"));
    }
    s.sampler.validate().config()?;
    s.detector.validate().config()?;
    let hand = HandModelFile::builtin();
    let dir = RunDir::create(&common.out, "bootstrap", &cfg, &[])?;
    let mut r = rng::stream(cfg.seed, "bootstrap-poses");
    let poses: Vec<_> = (0..s.scenes).map(|_| sample_pose(&hand.limits, &s.sampler, &mut r)).collect();
    let report = bootstrap_loop(&poses, &default_rig(), &hand.template, &hand.limits, &s.detector, &s.bootstrap, cfg.seed)
        .map_err(|e| match e {
            SynthError::Config(_) | SynthError::Fit(FitError::Config(_)) => CliError::Config(e.into()),
            _ => CliError::Data(e.into()),
        })?;
    dir.write_csv("rounds.csv", &report.rounds)?;
    dir.write_json("summary.json", &report)
}
