use std::path::Path;

use serde::{Deserialize, Serialize};
use siamhand::jsonio::read_json;
use siamhand::metrics_eval::{
    confusion, mean_joint_error, pck_curve, pck_curve_at_resolution, root_relative, scale_to_heatmap_resolution,
    write_confusion_csv, write_pck_csv, Alignment, EvalSummary, MetricsError, Resolution, Space,
};

use crate::error::{config_error, data_error, Classify, CliError, CliResult};
use crate::run::{require_input, Common, RunConfig, RunDir};

fn classify(e: MetricsError) -> CliError {
    match e {
        MetricsError::Thresholds(_) | MetricsError::Resolution(_) => CliError::Config(e.into()),
        _ => CliError::Data(e.into()),
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapSettings {
    /// Image resolution the coordinates are given in, `[width, height]`.
    pub from: [f64; 2],
    pub to: [f64; 2],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PckSettings {
    /// Defaults to 0–30 px or 0–50 mm in unit steps.
    pub thresholds: Option<Vec<f64>>,
    /// 3-D only.
    pub alignment: Alignment,
    /// 2-D only: evaluate after rescaling onto this grid.
    pub heatmap: Option<HeatmapSettings>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PckInput {
    space: Space,
    pred: Vec<Vec<Vec<f64>>>,
    gt: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    mask: Option<Vec<Vec<bool>>>,
}

fn points<const D: usize>(frames: &[Vec<Vec<f64>>], what: &str) -> CliResult<Vec<Vec<[f64; D]>>> {
    frames
        .iter()
        .enumerate()
        .map(|(f, frame)| {
            frame
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    <[f64; D]>::try_from(p.as_slice())
                        .map_err(|_| data_error(format!("{what} frame {f}, joint {j}: expected {D} coordinates, got {}", p.len())))
                })
                .collect()
        })
        .collect()
}

pub fn pck(common: &Common, input: &Path) -> CliResult<()> {
    let cfg = RunConfig::<PckSettings>::resolve(common)?;
    require_input(input)?;
    let data: PckInput = read_json(input).data()?;
    let s = &cfg.settings;
    let thresholds = s.thresholds.clone().unwrap_or_else(|| data.space.default_thresholds());
    let mask = data.mask.as_deref();
    let (curve, mean_error) = match data.space {
        Space::Pixel2D => {
            if s.alignment != Alignment::None {
                return Err(config_error("alignment applies to 3d_mm inputs only"));
            }
            let pred = points::<2>(&data.pred, "pred")?;
            let gt = points::<2>(&data.gt, "gt")?;
            match s.heatmap {
                Some(h) => {
                    let from = Resolution::new(h.from[0], h.from[1]).map_err(classify)?;
                    let to = Resolution::new(h.to[0], h.to[1]).map_err(classify)?;
                    let curve = pck_curve_at_resolution(&pred, &gt, &thresholds, mask, from, to).map_err(classify)?;
                    let err = mean_joint_error(
                        &scale_to_heatmap_resolution(&pred, from, to),
                        &scale_to_heatmap_resolution(&gt, from, to),
                        mask,
                    )
                    .map_err(classify)?;
                    (curve, err)
                }
                None => (
                    pck_curve(&pred, &gt, &thresholds, Space::Pixel2D, mask).map_err(classify)?,
                    mean_joint_error(&pred, &gt, mask).map_err(classify)?,
                ),
            }
        }
        Space::Millimetre3D => {
            if s.heatmap.is_some() {
                return Err(config_error("heatmap rescaling applies to 2d_px inputs only"));
            }
            let mut pred = points::<3>(&data.pred, "pred")?;
            let mut gt = points::<3>(&data.gt, "gt")?;
            if s.alignment == Alignment::RootRelative {
                pred = root_relative(&pred);
                gt = root_relative(&gt);
            }
            (
                pck_curve(&pred, &gt, &thresholds, Space::Millimetre3D, mask).map_err(classify)?,
                mean_joint_error(&pred, &gt, mask).map_err(classify)?,
            )
        }
    };
    let dir = RunDir::create(&common.out, "eval-pck", &cfg, &[input])?;
    let file = std::fs::File::create(dir.path("pck.csv")).data()?;
    write_pck_csv(&curve, file).data()?;
    dir.write_json(
        "summary.json",
        &EvalSummary {
            auc: Some(curve.auc),
            mean_error: Some(mean_error),
            overall_accuracy: None,
            evaluated: curve.evaluated,
        },
    )
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspEvalSettings {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraspInput {
    classes: usize,
    predictions: Vec<usize>,
    truths: Vec<usize>,
}

pub fn grasp(common: &Common, input: &Path) -> CliResult<()> {
    let cfg = RunConfig::<GraspEvalSettings>::resolve(common)?;
    require_input(input)?;
    let data: GraspInput = read_json(input).data()?;
    let cm = confusion(&data.predictions, &data.truths, data.classes).map_err(classify)?;
    let dir = RunDir::create(&common.out, "eval-grasp", &cfg, &[input])?;
    let file = std::fs::File::create(dir.path("confusion.csv")).data()?;
    write_confusion_csv(&cm, file).data()?;
    dir.write_json(
        "summary.json",
        &EvalSummary {
            auc: None,
            mean_error: None,
            overall_accuracy: Some(cm.overall_accuracy),
            evaluated: data.truths.len(),
        },
    )
}
