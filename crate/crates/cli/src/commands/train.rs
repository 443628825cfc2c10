use std::path::Path;

use serde::{Deserialize, Serialize};
use siamhand::dataset_pairs::{read_pairs, PairingMode};
use siamhand::hand_model::HandModelFile;
use siamhand::metrics_eval::{confusion, mean_3d_error, write_confusion_csv, Alignment};
use siamhand::mlp::{
    classify_grasp, grasp_dataset, lift_2d_to_3d, lift_examples, paired_lift_examples, train, train_paired, Examples,
    Head, MlpError, MlpModel, Target, Taxonomy, TrainConfig, TrainReport, TrainStatus, LIFT_SCALE_MM, POSE_DIM,
};
use siamhand::rng;

use crate::error::{config_error, data_error, Classify, CliError, CliResult};
use crate::run::{require_input, Common, RunConfig, RunDir};

fn classify(e: MlpError) -> CliError {
    match e {
        MlpError::Config(_) | MlpError::InvalidModel(_) => CliError::Config(e.into()),
        _ => CliError::Data(e.into()),
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftSettings {
    pub hidden: Vec<usize>,
    /// `seed` is replaced by the run seed.
    pub train: TrainConfig,
    /// Trailing share of the pairs held out; their occluded records form
    /// the validation set.
    pub validation_fraction: f64,
}

impl Default for LiftSettings {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            train: TrainConfig::default(),
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Serialize)]
struct LiftSummary {
    mode: PairingMode,
    status: TrainStatus,
    steps: usize,
    steps_to_target: Option<usize>,
    final_val_loss: Option<f64>,
    val_mean_3d_error_mm: f64,
    train_examples: usize,
    validation_examples: usize,
}

fn val_error_mm(model: &MlpModel, val: &Examples) -> CliResult<f64> {
    let mut pred = Vec::with_capacity(val.len());
    let mut gt = Vec::with_capacity(val.len());
    for (x, t) in val.inputs.iter().zip(&val.targets) {
        let Target::Values(t) = t else {
            return Err(data_error("lifting targets must be coordinate vectors"));
        };
        pred.push(lift_2d_to_3d(model, x).map_err(classify)?.joints());
        gt.push(t.chunks(3).map(|c| [c[0] * LIFT_SCALE_MM, c[1] * LIFT_SCALE_MM, c[2] * LIFT_SCALE_MM]).collect());
    }
    mean_3d_error(&pred, &gt, None, Alignment::None).data()
}

fn write_training(dir: &RunDir, report: &TrainReport) -> CliResult<()> {
    dir.write_json("model.json", &report.model)?;
    dir.write_csv("trace.csv", &report.trace)
}

pub fn lift(common: &Common, input: &Path, mode: Option<PairingMode>) -> CliResult<()> {
    let mut cfg = RunConfig::<LiftSettings>::resolve(common)?;
    if let Some(m) = mode {
        cfg.settings.train.mode = m;
    }
    cfg.settings.train.seed = cfg.seed;
    let s = &cfg.settings;
    s.train.validate().map_err(classify)?;
    if !(s.validation_fraction > 0.0 && s.validation_fraction < 1.0) {
        return Err(config_error("validation_fraction must lie in (0, 1)"));
    }
    require_input(input)?;
    let pairs = read_pairs(input).data()?;
    let held = ((pairs.len() as f64) * s.validation_fraction).ceil() as usize;
    if pairs.len() < 2 || held >= pairs.len() {
        return Err(data_error(format!("{} pairs are too few to split for validation", pairs.len())));
    }
    let (train_pairs, val_pairs) = pairs.split_at(pairs.len() - held);
    let data = paired_lift_examples(train_pairs);
    let val_records: Vec<_> = val_pairs.iter().map(|p| p.occluded.clone()).collect();
    let val = lift_examples(&val_records);
    if val.is_empty() {
        return Err(data_error("validation pairs contain no views"));
    }
    let dir = RunDir::create(&common.out, "train-lift", &cfg, &[input])?;
    let model = MlpModel::new(&layer_sizes(POSE_DIM, &s.hidden, POSE_DIM), Head::Linear, cfg.seed).map_err(classify)?;
    let report = train_paired(&model, &data, &val, &s.train).map_err(classify)?;
    write_training(&dir, &report)?;
    dir.write_json(
        "summary.json",
        &LiftSummary {
            mode: s.train.mode,
            status: report.status,
            steps: report.steps,
            steps_to_target: report.steps_to_target,
            final_val_loss: report.trace.last().map(|r| r.val_loss),
            val_mean_3d_error_mm: val_error_mm(&report.model, &val)?,
            train_examples: data.len(),
            validation_examples: val.len(),
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspSettings {
    pub taxonomy: Taxonomy,
    pub per_class: usize,
    pub held_out_per_class: usize,
    /// Articulation noise around each prototype, radians.
    pub sigma: f64,
    pub hidden: Vec<usize>,
    /// `seed` is replaced by the run seed; `mode` is unused.
    pub train: TrainConfig,
}

impl Default for GraspSettings {
    fn default() -> Self {
        Self {
            taxonomy: Taxonomy::Cutkosky17,
            per_class: 100,
            held_out_per_class: 30,
            sigma: 0.05,
            hidden: vec![64],
            train: TrainConfig {
                learning_rate: 0.05,
                batch_size: 32,
                max_steps: 3000,
                eval_interval: 100,
                mode: PairingMode::Single,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct GraspSummary {
    taxonomy: Taxonomy,
    status: TrainStatus,
    steps: usize,
    overall_accuracy: f64,
    per_class_accuracy: Vec<Option<f64>>,
    held_out: usize,
}

pub fn grasp(common: &Common) -> CliResult<()> {
    let mut cfg = RunConfig::<GraspSettings>::resolve(common)?;
    cfg.settings.train.seed = cfg.seed;
    let s = &cfg.settings;
    s.train.validate().map_err(classify)?;
    if s.per_class == 0 || s.held_out_per_class == 0 || !(s.sigma >= 0.0) {
        return Err(config_error("per_class and held_out_per_class must be positive, sigma non-negative"));
    }
    let hand = HandModelFile::builtin();
    let to_examples = |per_class: usize, stream: &str| -> CliResult<(Examples, Vec<_>)> {
        let set = grasp_dataset(s.taxonomy, &hand.template, &hand.limits, per_class, s.sigma, &mut rng::stream(cfg.seed, stream))
            .map_err(classify)?;
        let mut ex = Examples::default();
        for (pose, class) in &set {
            ex.push(pose.as_slice().to_vec(), Target::Class(*class));
        }
        Ok((ex, set))
    };
    let (train_ex, _) = to_examples(s.per_class, "grasp-train")?;
    let (test_ex, test_set) = to_examples(s.held_out_per_class, "grasp-test")?;
    let dir = RunDir::create(&common.out, "train-grasp", &cfg, &[])?;
    let classes = s.taxonomy.num_classes();
    let model = MlpModel::new(&layer_sizes(POSE_DIM, &s.hidden, classes), Head::Softmax, cfg.seed).map_err(classify)?;
    let report = train(&model, &train_ex, &test_ex, &s.train).map_err(classify)?;
    write_training(&dir, &report)?;

    let mut preds = Vec::with_capacity(test_set.len());
    for (pose, _) in &test_set {
        preds.push(classify_grasp(&report.model, pose, s.taxonomy).map_err(classify)?.class);
    }
    let truths: Vec<usize> = test_set.iter().map(|(_, c)| *c).collect();
    let cm = confusion(&preds, &truths, classes).data()?;
    let file = std::fs::File::create(dir.path("confusion.csv")).data()?;
    write_confusion_csv(&cm, file).data()?;
    dir.write_json(
        "summary.json",
        &GraspSummary {
            taxonomy: s.taxonomy,
            status: report.status,
            steps: report.steps,
            overall_accuracy: cm.overall_accuracy,
            per_class_accuracy: cm.per_class_accuracy,
            held_out: test_set.len(),
        },
    )
}
