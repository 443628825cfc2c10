//! Keypoint and classification metrics: PCK curves with normalized AUC,
//! mean joint error and confusion matrices, plus CSV export.
//!
//! Joint inputs are per-frame lists of points. Masks share that shape; a
//! `None` mask evaluates every joint.

use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("label {label} outside 0..{classes}")]
    Label { label: usize, classes: usize },
    #[error("invalid resolution: {0}")]
    Resolution(String),
    #[error("non-finite coordinate in frame {frame}, joint {joint}")]
    NonFinite { frame: usize, joint: usize },
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    #[serde(rename = "2d_px")]
    Pixel2D,
    #[serde(rename = "3d_mm")]
    Millimetre3D,
}

impl Space {
    pub fn dims(self) -> usize {
        match self {
            Space::Pixel2D => 2,
            Space::Millimetre3D => 3,
        }
    }

    /// 0–30 px or 0–50 mm in unit steps.
    pub fn default_thresholds(self) -> Vec<f64> {
        let max = match self {
            Space::Pixel2D => 30,
            Space::Millimetre3D => 50,
        };
        (0..=max).map(f64::from).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckCurve {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
    pub auc: f64,
    pub space: Space,
    /// Per-axis factor applied to the coordinates before evaluation.
    pub scale: [f64; 2],
    pub evaluated: usize,
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), MetricsError> {
    if thresholds.len() < 2 {
        return Err(MetricsError::Thresholds("need at least two".into()));
    }
    if thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(MetricsError::Thresholds("must be finite and non-negative".into()));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MetricsError::Thresholds("must be strictly increasing".into()));
    }
    Ok(())
}

/// Euclidean distances of the masked joints, in frame-major order.
fn masked_distances<const D: usize>(
    pred: &[Vec<[f64; D]>],
    gt: &[Vec<[f64; D]>],
    mask: Option<&[Vec<bool>]>,
) -> Result<Vec<f64>, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Shape(format!("{} predicted frames, {} ground-truth", pred.len(), gt.len())));
    }
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(MetricsError::Shape(format!("mask has {} frames, data {}", m.len(), gt.len())));
        }
    }
    let mut out = Vec::new();
    for (f, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(MetricsError::Shape(format!("frame {f}: {} vs {} joints", p.len(), g.len())));
        }
        let row = mask.map(|m| &m[f]);
        if row.is_some_and(|r| r.len() != g.len()) {
            return Err(MetricsError::Shape(format!("frame {f}: mask length differs from joints")));
        }
        for (j, (a, b)) in p.iter().zip(g).enumerate() {
            if row.is_some_and(|r| !r[j]) {
                continue;
            }
            if a.iter().chain(b).any(|x| !x.is_finite()) {
                return Err(MetricsError::NonFinite { frame: f, joint: j });
            }
            out.push(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
        }
    }
    if out.is_empty() {
        return Err(MetricsError::Undefined("mask selects no joints"));
    }
    Ok(out)
}

/// PCK over precomputed distances.
pub fn pck_from_distances(distances: &[f64], thresholds: &[f64], space: Space) -> Result<PckCurve, MetricsError> {
    check_thresholds(thresholds)?;
    if distances.is_empty() {
        return Err(MetricsError::Undefined("no joints to evaluate"));
    }
    let n = distances.len();
    let fractions: Vec<f64> = thresholds
        .iter()
        .map(|t| distances.iter().filter(|d| **d <= *t).count() as f64 / n as f64)
        .collect();
    Ok(PckCurve {
        auc: normalized_auc(thresholds, &fractions),
        thresholds: thresholds.to_vec(),
        fractions,
        space,
        scale: [1.0, 1.0],
        evaluated: n,
    })
}

/// Trapezoid area under the curve divided by the threshold span.
pub fn normalized_auc(thresholds: &[f64], fractions: &[f64]) -> f64 {
    let span = thresholds[thresholds.len() - 1] - thresholds[0];
    let area: f64 = thresholds
        .windows(2)
        .zip(fractions.windows(2))
        .map(|(t, f)| (t[1] - t[0]) * (f[0] + f[1]) / 2.0)
        .sum();
    (area / span).clamp(0.0, 1.0)
}

/// Fraction of masked joints within each threshold of ground truth.
pub fn pck_curve<const D: usize>(
    pred: &[Vec<[f64; D]>],
    gt: &[Vec<[f64; D]>],
    thresholds: &[f64],
    space: Space,
    mask: Option<&[Vec<bool>]>,
) -> Result<PckCurve, MetricsError> {
    if space.dims() != D {
        return Err(MetricsError::Shape(format!("{D}-d points for a {}-d space", space.dims())));
    }
    pck_from_distances(&masked_distances(pred, gt, mask)?, thresholds, space)
}

/// Image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: f64,
    pub height: f64,
}

impl Resolution {
    pub fn new(width: f64, height: f64) -> Result<Self, MetricsError> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(MetricsError::Resolution(format!("{width}x{height}")));
        }
        Ok(Self { width, height })
    }

    pub fn square(side: f64) -> Result<Self, MetricsError> {
        Self::new(side, side)
    }
}

/// Per-axis factors mapping `from` pixel coordinates onto `to`.
pub fn resolution_scale(from: Resolution, to: Resolution) -> [f64; 2] {
    [to.width / from.width, to.height / from.height]
}

/// Rescales pixel coordinates from one image resolution to another, e.g.
/// onto a 32×32 heatmap grid.
pub fn scale_to_heatmap_resolution(frames: &[Vec<[f64; 2]>], from: Resolution, to: Resolution) -> Vec<Vec<[f64; 2]>> {
    let s = resolution_scale(from, to);
    frames
        .iter()
        .map(|f| f.iter().map(|p| [p[0] * s[0], p[1] * s[1]]).collect())
        .collect()
}

/// [`pck_curve`] after moving both inputs to the `to` resolution.
pub fn pck_curve_at_resolution(
    pred: &[Vec<[f64; 2]>],
    gt: &[Vec<[f64; 2]>],
    thresholds: &[f64],
    mask: Option<&[Vec<bool>]>,
    from: Resolution,
    to: Resolution,
) -> Result<PckCurve, MetricsError> {
    let mut curve = pck_curve(
        &scale_to_heatmap_resolution(pred, from, to),
        &scale_to_heatmap_resolution(gt, from, to),
        thresholds,
        Space::Pixel2D,
        mask,
    )?;
    curve.scale = resolution_scale(from, to);
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    #[default]
    None,
    /// Subtract each frame's joint 0 (the wrist) from pred and gt.
    RootRelative,
}

/// Subtracts each frame's first joint from all of its joints.
pub fn root_relative(frames: &[Vec<[f64; 3]>]) -> Vec<Vec<[f64; 3]>> {
    frames
        .iter()
        .map(|f| {
            let Some(root) = f.first().copied() else {
                return Vec::new();
            };
            f.iter().map(|p| [p[0] - root[0], p[1] - root[1], p[2] - root[2]]).collect()
        })
        .collect()
}

/// Mean Euclidean distance over masked joints, in the input units.
pub fn mean_joint_error<const D: usize>(
    pred: &[Vec<[f64; D]>],
    gt: &[Vec<[f64; D]>],
    mask: Option<&[Vec<bool>]>,
) -> Result<f64, MetricsError> {
    let d = masked_distances(pred, gt, mask)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Mean Euclidean joint error over masked joints.
pub fn mean_3d_error(
    pred: &[Vec<[f64; 3]>],
    gt: &[Vec<[f64; 3]>],
    mask: Option<&[Vec<bool>]>,
    alignment: Alignment,
) -> Result<f64, MetricsError> {
    match alignment {
        Alignment::None => mean_joint_error(pred, gt, mask),
        Alignment::RootRelative => mean_joint_error(&root_relative(pred), &root_relative(gt), mask),
    }
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
    /// `None` for classes with no samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub overall_accuracy: f64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Tallies predictions against truths. Upstream argmax ties resolve to the
/// lowest class id.
pub fn confusion(predictions: &[usize], truths: &[usize], classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != truths.len() {
        return Err(MetricsError::Shape(format!(
            "{} predictions, {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(MetricsError::Undefined("no samples"));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        for label in [p, t] {
            if label >= classes {
                return Err(MetricsError::Label { label, classes });
            }
        }
        counts[t][p] += 1;
    }
    let per_class_accuracy = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    let trace: u64 = (0..classes).map(|i| counts[i][i]).sum();
    Ok(ConfusionMatrix {
        classes,
        counts,
        per_class_accuracy,
        overall_accuracy: trace as f64 / predictions.len() as f64,
    })
}

/// `threshold,fraction` rows.
pub fn write_pck_csv<W: Write>(curve: &PckCurve, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "fraction"])?;
    for (t, f) in curve.thresholds.iter().zip(&curve.fractions) {
        w.write_record([t.to_string(), f.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per true class: `truth,pred_0,…,pred_{n-1},accuracy`.
pub fn write_confusion_csv<W: Write>(cm: &ConfusionMatrix, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["truth".to_string()];
    header.extend((0..cm.classes).map(|c| format!("pred_{c}")));
    header.push("accuracy".into());
    w.write_record(&header)?;
    for (i, row) in cm.counts.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(u64::to_string));
        rec.push(cm.per_class_accuracy[i].map_or_else(String::new, |a| a.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Headline numbers gathered for reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub auc: Option<f64>,
    pub mean_error: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub evaluated: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn frames(n: usize) -> Vec<Vec<[f64; 3]>> {
        let mut r = crate::rng::seeded(3);
        (0..n)
            .map(|_| (0..21).map(|_| [r.random_range(-50.0..50.0), r.random_range(-50.0..50.0), r.random_range(200.0..400.0)]).collect())
            .collect()
    }

    fn shift(f: &[Vec<[f64; 3]>], d: [f64; 3]) -> Vec<Vec<[f64; 3]>> {
        f.iter().map(|v| v.iter().map(|p| [p[0] + d[0], p[1] + d[1], p[2] + d[2]]).collect()).collect()
    }

    #[test]
    fn perfect_prediction() {
        let gt = frames(4);
        let c = pck_curve(&gt, &gt, &Space::Millimetre3D.default_thresholds(), Space::Millimetre3D, None).unwrap();
        assert!(c.fractions.iter().all(|f| *f == 1.0));
        assert_eq!(c.auc, 1.0);
        assert_eq!(mean_3d_error(&gt, &gt, None, Alignment::None).unwrap(), 0.0);
    }

    #[test]
    fn half_displaced_plateau() {
        let gt = frames(2);
        let mut pred = gt.clone();
        for f in &mut pred {
            for p in f.iter_mut().step_by(2).take(10) {
                p[0] += 1000.0;
            }
        }
        let mask: Vec<Vec<bool>> = (0..2).map(|_| (0..21).map(|j| j < 20).collect()).collect();
        let c = pck_curve(&pred, &gt, &Space::Millimetre3D.default_thresholds(), Space::Millimetre3D, Some(&mask)).unwrap();
        assert!(c.fractions.iter().all(|f| *f == 0.5));
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.evaluated, 40);
    }

    #[test]
    fn uniform_offset_and_alignment() {
        let gt = frames(3);
        let pred = shift(&gt, [3.0, 0.0, 4.0]);
        assert!((mean_3d_error(&pred, &gt, None, Alignment::None).unwrap() - 5.0).abs() < 1e-12);
        assert!(mean_3d_error(&pred, &gt, None, Alignment::RootRelative).unwrap() < 1e-12);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let gt = frames(1);
        let mask = vec![vec![false; 21]];
        assert!(matches!(
            pck_curve(&gt, &gt, &[0.0, 1.0], Space::Millimetre3D, Some(&mask)),
            Err(MetricsError::Undefined(_))
        ));
        assert!(matches!(
            mean_3d_error(&gt, &gt, Some(&mask), Alignment::None),
            Err(MetricsError::Undefined(_))
        ));
    }

    #[test]
    fn rejects_bad_thresholds_and_space() {
        let gt = frames(1);
        assert!(pck_curve(&gt, &gt, &[1.0, 1.0], Space::Millimetre3D, None).is_err());
        assert!(pck_curve(&gt, &gt, &[1.0], Space::Millimetre3D, None).is_err());
        assert!(pck_curve(&gt, &gt, &[0.0, 1.0], Space::Pixel2D, None).is_err());
    }

    #[test]
    fn heatmap_scaling() {
        let pts = vec![vec![[256.0, 128.0], [8.0, 16.0]]];
        let full = Resolution::square(256.0).unwrap();
        assert_eq!(scale_to_heatmap_resolution(&pts, full, full), pts);
        let small = Resolution::square(32.0).unwrap();
        assert_eq!(scale_to_heatmap_resolution(&pts, full, small), vec![vec![[32.0, 16.0], [1.0, 2.0]]]);
        assert!(Resolution::new(0.0, 4.0).is_err());
    }

    #[test]
    fn heatmap_pck_matches_scaled_threshold() {
        let mut r = crate::rng::seeded(8);
        let gt: Vec<Vec<[f64; 2]>> =
            vec![(0..500).map(|_| [r.random_range(0.0..256.0), r.random_range(0.0..256.0)]).collect()];
        let pred: Vec<Vec<[f64; 2]>> =
            vec![gt[0].iter().map(|p| [p[0] + r.random_range(-12.0..12.0), p[1] + r.random_range(-12.0..12.0)]).collect()];
        let full = Resolution::square(256.0).unwrap();
        let small = Resolution::square(32.0).unwrap();
        let a = pck_curve(&pred, &gt, &[0.0, 8.0], Space::Pixel2D, None).unwrap();
        let b = pck_curve_at_resolution(&pred, &gt, &[0.0, 1.0], None, full, small).unwrap();
        assert_eq!(a.fractions[1], b.fractions[1]);
        assert_eq!(b.scale, [0.125, 0.125]);
    }

    #[test]
    fn confusion_examples() {
        let t = [0, 1, 2, 2, 1, 0];
        let cm = confusion(&t, &t, 3).unwrap();
        assert_eq!(cm.counts, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        assert_eq!(cm.overall_accuracy, 1.0);

        let cm = confusion(&[1; 6], &t, 4).unwrap();
        assert_eq!(cm.counts.iter().map(|r| r[1]).collect::<Vec<_>>(), vec![2, 2, 2, 0]);
        assert_eq!(cm.per_class_accuracy, vec![Some(0.0), Some(1.0), Some(0.0), None]);
        assert!(matches!(confusion(&[3], &[0], 3), Err(MetricsError::Label { label: 3, classes: 3 })));
    }

    #[test]
    fn confusion_counting_oracle() {
        let mut r = crate::rng::seeded(21);
        let truths: Vec<usize> = (0..300).map(|_| r.random_range(0..3)).collect();
        let preds: Vec<usize> = (0..300).map(|_| r.random_range(0..3)).collect();
        let cm = confusion(&preds, &truths, 3).unwrap();
        let direct = preds.iter().zip(&truths).filter(|(p, t)| p == t).count();
        assert_eq!(cm.overall_accuracy, direct as f64 / 300.0);
        assert_eq!(cm.overall_accuracy, cm.trace() as f64 / cm.total() as f64);
        for c in 0..3 {
            assert_eq!(cm.row_sums()[c], truths.iter().filter(|t| **t == c).count() as u64);
        }
    }

    #[test]
    fn csv_exports() {
        let curve = pck_from_distances(&[0.0, 2.0], &[0.0, 1.0, 2.0], Space::Pixel2D).unwrap();
        let mut buf = Vec::new();
        write_pck_csv(&curve, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "threshold,fraction\n0,0.5\n1,0.5\n2,1\n");
        let cm = confusion(&[0, 1], &[0, 0], 2).unwrap();
        let mut buf = Vec::new();
        write_confusion_csv(&cm, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "truth,pred_0,pred_1,accuracy\n0,1,1,0.5\n1,0,0,\n");
    }

    proptest! {
        #[test]
        fn pck_is_a_monotone_count(seed in any::<u64>(), n in 1usize..200) {
            let mut r = crate::rng::seeded(seed);
            let d: Vec<f64> = (0..n).map(|_| r.random_range(0.0..40.0)).collect();
            let thresholds = Space::Pixel2D.default_thresholds();
            let c = pck_from_distances(&d, &thresholds, Space::Pixel2D).unwrap();
            prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
            for (t, f) in thresholds.iter().zip(&c.fractions) {
                let count = d.iter().filter(|x| **x <= *t).count();
                prop_assert_eq!(*f, count as f64 / n as f64);
            }
            prop_assert!((0.0..=1.0).contains(&c.auc));
        }

        #[test]
        fn translation_leaves_error_unchanged(d in proptest::array::uniform3(-1e3f64..1e3)) {
            let gt = frames(2);
            let pred = shift(&gt, [1.0, -2.0, 0.5]);
            let a = mean_3d_error(&pred, &gt, None, Alignment::None).unwrap();
            let b = mean_3d_error(&shift(&pred, d), &shift(&gt, d), None, Alignment::None).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn plateau_auc_survives_refinement(k in 1usize..30, frac in 0.0f64..0.999) {
            // every distance beyond the grid: a constant curve
            let n = 50;
            let hits = (frac * n as f64) as usize;
            let d: Vec<f64> = (0..n).map(|i| if i < hits { 0.0 } else { 1e6 }).collect();
            let coarse = pck_from_distances(&d, &[0.0, 30.0], Space::Pixel2D).unwrap();
            let fine = pck_from_distances(&d, &[0.0, k as f64, 30.0], Space::Pixel2D).unwrap();
            prop_assert!((coarse.auc - fine.auc).abs() < 1e-12);
        }
    }
}
