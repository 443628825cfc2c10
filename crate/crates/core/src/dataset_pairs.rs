//! Paired occluded/clean records sharing one ground truth.
//!
//! A pair holds two renderings (or captures) of the same hand pose from the
//! same cameras: one with the hand-held object, one with it removed. Ground
//! truth comes from the clean record and is shared by both.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera_geometry::CameraModel;
use crate::hand_model::SkeletonTemplate;
use crate::hand_model::HandParams;
use crate::jsonio::{read_jsonl, write_jsonl, JsonIoError};
use crate::mlp::GraspTag;
use crate::skeleton_fitter::VISIBLE;
use crate::synth_oracle::{
    render_detections, DetectorModel, GroundTruth, OcclusionSpec, RenderConfig, SceneRecord, SynthError,
};

pub const PAIR_SCHEMA_VERSION: u32 = 1;
/// Default allowed drift between the branches of a captured pair.
pub const DEFAULT_ALIGNMENT_TOLERANCE_PX: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum PairError {
    #[error("occluded branch needs a non-empty occlusion spec")]
    EmptyOcclusion,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch size {batch} exceeds {available} available pairs")]
    BatchTooLarge { batch: usize, available: usize },
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("{path}: pair schema version {found}, expected {expected}")]
    SchemaVersion { path: String, found: u32, expected: u32 },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] JsonIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Synthetic,
    Ingested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Occluded,
    Clean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiamesePair {
    pub schema_version: u32,
    pub pair_id: u64,
    pub source: PairSource,
    pub ground_truth: GroundTruth,
    pub occluded: SceneRecord,
    pub clean: SceneRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusion_spec: Option<OcclusionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp_type: Option<GraspTag>,
}

impl SiamesePair {
    pub fn record(&self, branch: Branch) -> &SceneRecord {
        match branch {
            Branch::Occluded => &self.occluded,
            Branch::Clean => &self.clean,
        }
    }
}

/// Renders both branches of a pair with independent noise draws.
#[allow(clippy::too_many_arguments)]
pub fn make_pair<R: Rng + ?Sized>(
    pair_id: u64,
    gt: &HandParams,
    rig: &[CameraModel],
    template: &SkeletonTemplate,
    detector: &DetectorModel,
    occ_spec: &OcclusionSpec,
    render: &RenderConfig,
    rng: &mut R,
) -> Result<SiamesePair, PairError> {
    if occ_spec.is_empty() {
        return Err(PairError::EmptyOcclusion);
    }
    let clean = render_detections(pair_id, gt, rig, template, detector, &OcclusionSpec::none(), render, rng)?;
    let occluded = render_detections(pair_id, gt, rig, template, detector, occ_spec, render, rng)?;
    Ok(SiamesePair {
        schema_version: PAIR_SCHEMA_VERSION,
        pair_id,
        source: PairSource::Synthetic,
        ground_truth: clean.ground_truth.clone(),
        occluded,
        clean,
        occlusion_spec: Some(*occ_spec),
        grasp_type: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    GroundTruthMismatch { branch: Branch },
    CameraMismatch { view: usize },
    CleanBranchOccluded { view: usize, joint: usize },
    NoOcclusion,
    Misaligned { view: usize, joint: usize, drift_px: f64 },
}

/// Checks the pair invariants. Alignment between branches is checked only
/// for ingested pairs, on joints visible in both.
pub fn validate_pair(pair: &SiamesePair, alignment_tolerance_px: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for branch in [Branch::Occluded, Branch::Clean] {
        if pair.record(branch).ground_truth != pair.ground_truth {
            out.push(Violation::GroundTruthMismatch { branch });
        }
    }
    for occ in &pair.occluded.views {
        if let Some(clean) = pair.clean.views.iter().find(|v| v.view == occ.view) {
            if clean.camera != occ.camera {
                out.push(Violation::CameraMismatch { view: occ.view });
            }
        }
    }
    for (i, flags) in pair.clean.occluded.iter().enumerate() {
        let view = pair.clean.views.get(i).map_or(i, |v| v.view);
        for (joint, _) in flags.iter().enumerate().filter(|(_, f)| **f) {
            out.push(Violation::CleanBranchOccluded { view, joint });
        }
    }
    let declared = pair.occlusion_spec.is_some_and(|s| !s.is_empty());
    if !pair.occluded.has_occlusion() && !declared {
        out.push(Violation::NoOcclusion);
    }
    if pair.source == PairSource::Ingested {
        for (a_idx, a) in pair.occluded.views.iter().enumerate() {
            let Some((b_idx, b)) = pair.clean.views.iter().enumerate().find(|(_, v)| v.view == a.view) else {
                continue;
            };
            for (joint, (ja, jb)) in a.joints.iter().zip(&b.joints).enumerate() {
                let flagged = |rec: &SceneRecord, idx: usize| {
                    rec.occluded.get(idx).and_then(|f| f.get(joint)).copied().unwrap_or(false)
                };
                let visible = |j: &crate::skeleton_fitter::JointObservation| j.confidence > 0.0 && j.visibility == VISIBLE;
                if !(visible(ja) && visible(jb)) || flagged(&pair.occluded, a_idx) || flagged(&pair.clean, b_idx) {
                    continue;
                }
                let drift = (ja.pixel[0] - jb.pixel[0]).hypot(ja.pixel[1] - jb.pixel[1]);
                if drift > alignment_tolerance_px {
                    out.push(Violation::Misaligned {
                        view: a.view,
                        joint,
                        drift_px: drift,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Each occluded record is paired with its own clean twin.
    #[default]
    Siamese,
    /// Records from all pairs are shuffled together and paired arbitrarily.
    RandomPair,
    /// One branch with twice the batch size.
    Single,
}

/// A record of the dataset: which pair, which branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordRef {
    pub pair: usize,
    pub branch: Branch,
}

/// Record references of one mini-batch. In the paired modes row `i` of
/// `first` and row `i` of `second` form one two-branch example; `second`
/// is empty in single mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub first: Vec<RecordRef>,
    pub second: Vec<RecordRef>,
}

/// One epoch of batches over `pairs` dataset pairs, incomplete trailing
/// batches dropped.
pub fn plan_batches<R: Rng + ?Sized>(
    pairs: usize,
    batch_size: usize,
    mode: PairingMode,
    rng: &mut R,
) -> Result<Vec<BatchPlan>, PairError> {
    if pairs == 0 {
        return Err(PairError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(PairError::ZeroBatch);
    }
    if batch_size > pairs {
        return Err(PairError::BatchTooLarge {
            batch: batch_size,
            available: pairs,
        });
    }
    let plans = match mode {
        PairingMode::Siamese => {
            let mut order: Vec<usize> = (0..pairs).collect();
            order.shuffle(rng);
            order
                .chunks_exact(batch_size)
                .map(|c| BatchPlan {
                    first: c.iter().map(|&pair| RecordRef { pair, branch: Branch::Occluded }).collect(),
                    second: c.iter().map(|&pair| RecordRef { pair, branch: Branch::Clean }).collect(),
                })
                .collect()
        }
        PairingMode::RandomPair | PairingMode::Single => {
            let mut pool: Vec<RecordRef> = (0..pairs)
                .flat_map(|pair| {
                    [Branch::Occluded, Branch::Clean].map(|branch| RecordRef { pair, branch })
                })
                .collect();
            pool.shuffle(rng);
            pool.chunks_exact(2 * batch_size)
                .map(|c| {
                    if mode == PairingMode::Single {
                        BatchPlan {
                            first: c.to_vec(),
                            second: Vec::new(),
                        }
                    } else {
                        BatchPlan {
                            first: c[..batch_size].to_vec(),
                            second: c[batch_size..].to_vec(),
                        }
                    }
                })
                .collect()
        }
    };
    Ok(plans)
}

/// Inputs and targets of one batch, extracted from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBatch {
    pub mode: PairingMode,
    pub first_ids: Vec<u64>,
    pub second_ids: Vec<u64>,
    pub first_inputs: Vec<Vec<f64>>,
    pub second_inputs: Vec<Vec<f64>>,
    pub first_targets: Vec<Vec<f64>>,
    pub second_targets: Vec<Vec<f64>>,
}

/// Plans one epoch and extracts inputs with `input` and targets (from the
/// pair's shared ground truth) with `target`.
pub fn assemble_batches<R, I, T>(
    pairs: &[SiamesePair],
    batch_size: usize,
    mode: PairingMode,
    rng: &mut R,
    input: I,
    target: T,
) -> Result<Vec<PairBatch>, PairError>
where
    R: Rng + ?Sized,
    I: Fn(&SceneRecord) -> Vec<f64>,
    T: Fn(&GroundTruth) -> Vec<f64>,
{
    let plans = plan_batches(pairs.len(), batch_size, mode, rng)?;
    let ids = |refs: &[RecordRef]| refs.iter().map(|r| pairs[r.pair].pair_id).collect();
    let inputs = |refs: &[RecordRef]| refs.iter().map(|r| input(pairs[r.pair].record(r.branch))).collect();
    let targets = |refs: &[RecordRef]| refs.iter().map(|r| target(&pairs[r.pair].ground_truth)).collect();
    Ok(plans
        .iter()
        .map(|p| PairBatch {
            mode,
            first_ids: ids(&p.first),
            second_ids: ids(&p.second),
            first_inputs: inputs(&p.first),
            second_inputs: inputs(&p.second),
            first_targets: targets(&p.first),
            second_targets: targets(&p.second),
        })
        .collect())
}

pub fn write_pairs(path: &Path, pairs: &[SiamesePair]) -> Result<(), PairError> {
    Ok(write_jsonl(path, pairs)?)
}

pub fn read_pairs(path: &Path) -> Result<Vec<SiamesePair>, PairError> {
    let pairs: Vec<SiamesePair> = read_jsonl(path)?;
    if let Some(p) = pairs.iter().find(|p| p.schema_version != PAIR_SCHEMA_VERSION) {
        return Err(PairError::SchemaVersion {
            path: path.display().to_string(),
            found: p.schema_version,
            expected: PAIR_SCHEMA_VERSION,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::HandModelFile;
    use crate::rng;
    use crate::synth_oracle::{default_rig, sample_pose, PoseSamplerConfig};
    use std::collections::HashSet;

    fn pair(seed: u64, sigma: f64) -> SiamesePair {
        let model = HandModelFile::builtin();
        let mut r = rng::item_stream(seed, "pair", seed);
        let gt = sample_pose(&model.limits, &PoseSamplerConfig::default(), &mut r);
        let detector = DetectorModel {
            sigma,
            ..DetectorModel::default()
        };
        make_pair(
            seed,
            &gt,
            &default_rig(),
            &model.template,
            &detector,
            &OcclusionSpec::default(),
            &RenderConfig::default(),
            &mut r,
        )
        .unwrap()
    }

    #[test]
    fn generated_pairs_are_valid() {
        for seed in 0..200 {
            let p = pair(seed, 1.0);
            assert!(validate_pair(&p, DEFAULT_ALIGNMENT_TOLERANCE_PX).is_empty(), "seed {seed}");
        }
        let p = pair(3, 0.0);
        for v in &p.clean.views {
            for (k, j) in v.joints.iter().enumerate() {
                assert_eq!(j.pixel, v.camera.project(&p.ground_truth.joints.points[k]).unwrap());
            }
        }
    }

    #[test]
    fn perturbed_ground_truth_is_reported() {
        let mut p = pair(1, 1.0);
        p.clean.ground_truth.params.theta[4] += 0.01;
        assert_eq!(
            validate_pair(&p, DEFAULT_ALIGNMENT_TOLERANCE_PX),
            vec![Violation::GroundTruthMismatch { branch: Branch::Clean }]
        );
    }

    #[test]
    fn ingested_drift_is_reported() {
        let mut p = pair(2, 0.0);
        p.source = PairSource::Ingested;
        // keep only geometry-free differences: copy the clean detections
        for (o, c) in p.occluded.views.iter_mut().zip(&p.clean.views) {
            o.joints = c.joints.clone();
        }
        p.occluded.occluded.iter_mut().for_each(|f| f.iter_mut().for_each(|x| *x = false));
        p.occluded.views[1].joints[12].pixel[0] += 12.0;
        let v = validate_pair(&p, DEFAULT_ALIGNMENT_TOLERANCE_PX);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::Misaligned { view: 1, joint: 12, drift_px } if (drift_px - 12.0).abs() < 1e-9));
    }

    #[test]
    fn siamese_batches_keep_pairs_together() {
        let plans = plan_batches(10, 3, PairingMode::Siamese, &mut rng::seeded(4)).unwrap();
        assert_eq!(plans.len(), 3);
        let mut seen = HashSet::new();
        for p in &plans {
            for (a, b) in p.first.iter().zip(&p.second) {
                assert_eq!(a.pair, b.pair);
                assert_eq!((a.branch, b.branch), (Branch::Occluded, Branch::Clean));
                assert!(seen.insert(a.pair));
            }
        }
    }

    #[test]
    fn single_mode_doubles_the_batch() {
        let plans = plan_batches(100, 32, PairingMode::Single, &mut rng::seeded(1)).unwrap();
        assert!(plans.iter().all(|p| p.first.len() == 64 && p.second.is_empty()));
        let a = plan_batches(100, 32, PairingMode::RandomPair, &mut rng::seeded(9)).unwrap();
        let b = plan_batches(100, 32, PairingMode::RandomPair, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            plan_batches(0, 1, PairingMode::Siamese, &mut rng::seeded(1)),
            Err(PairError::EmptyDataset)
        ));
        assert!(matches!(
            plan_batches(3, 4, PairingMode::Siamese, &mut rng::seeded(1)),
            Err(PairError::BatchTooLarge { .. })
        ));
    }

    #[test]
    fn siamese_targets_are_identical() {
        let pairs: Vec<_> = (0..6).map(|s| pair(s, 1.0)).collect();
        let batches = assemble_batches(
            &pairs,
            2,
            PairingMode::Siamese,
            &mut rng::seeded(0),
            |r| r.views[0].joints.iter().flat_map(|j| j.pixel).collect(),
            |gt| gt.joints.points.iter().flatten().copied().collect(),
        )
        .unwrap();
        for b in &batches {
            assert_eq!(b.first_targets, b.second_targets);
            assert_eq!(b.first_ids, b.second_ids);
        }
    }

    #[test]
    fn pair_store_round_trips_byte_for_byte() {
        let dir = std::env::temp_dir().join(format!("siamhand-pairs-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let a = dir.join("a.jsonl");
        let b = dir.join("b.jsonl");
        let pairs: Vec<_> = (0..3).map(|s| pair(s, 1.0)).collect();
        write_pairs(&a, &pairs).unwrap();
        let loaded = read_pairs(&a).unwrap();
        write_pairs(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
