//! Monte-Carlo reference for the 1 px noise recovery bound.
//!
//! Fits `N` scenes (default 1000) rendered with unit Gaussian detection
//! noise and prints the per-scene error distribution together with the
//! bound for a 100-scene mean: reference mean + 3 standard errors.
//!
//! ```text
//! cargo run --release -p siamhand-core --example noise_reference -- [N]
//! ```

use siamhand::hand_model::HandModelFile;
use siamhand::rng;
use siamhand::skeleton_fitter::{FitConfig, InitStrategy};
use siamhand::synth_oracle::{
    default_rig, fit_scene, generate_scene, DetectorModel, OcclusionSpec, PoseSamplerConfig, RenderConfig,
};

const SEED: u64 = 20_240_601;
const ACCEPTANCE_SCENES: f64 = 100.0;

fn main() {
    let n: u64 = std::env::args().nth(1).map_or(1000, |s| s.parse().expect("scene count"));
    let model = HandModelFile::builtin();
    let rig = default_rig();
    let detector = DetectorModel::default();
    let mut errors = Vec::with_capacity(n as usize);
    for i in 0..n {
        let mut r = rng::item_stream(SEED, "noise-reference", i);
        let record = generate_scene(
            i,
            &PoseSamplerConfig::default(),
            &model.limits,
            &rig,
            &model.template,
            &detector,
            &OcclusionSpec::none(),
            &RenderConfig::default(),
            &mut r,
        )
        .expect("scene");
        let fit = fit_scene(
            &record,
            &model.template,
            &model.limits,
            InitStrategy::default(),
            &FitConfig::default(),
        )
        .expect("fit");
        errors.push(fit.mean_joint_error_mm);
    }
    let mean = errors.iter().sum::<f64>() / n as f64;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = var.sqrt() / ACCEPTANCE_SCENES.sqrt();
    println!("scenes {n}");
    println!("mean_mm {mean:.6}");
    println!("sd_mm {:.6}", var.sqrt());
    println!("se_of_100_scene_mean_mm {se:.6}");
    println!("bound_mm {:.6}", mean + 3.0 * se);
}
