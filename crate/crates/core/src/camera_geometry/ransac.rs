use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::marker::refine_pose;
use super::{project_marker, GeometryError, Intrinsics, MarkerCubeSpec, MarkerDetection, MarkerSpec, Pose6D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    /// Marker inlier threshold on the 4-corner RMS reprojection error.
    pub threshold_px: f64,
    pub iterations: usize,
    pub min_inliers: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold_px: 2.0,
            iterations: 100,
            min_inliers: 3,
        }
    }
}

/// A per-marker pose hypothesis and the detection it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerHypothesis {
    pub pose: Pose6D,
    pub detection: MarkerDetection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consensus {
    pub pose: Pose6D,
    /// Inlier marker ids, ascending.
    pub inlier_ids: Vec<u32>,
    /// Indices into the hypothesis list, ascending.
    pub inlier_indices: Vec<usize>,
    /// RMS corner error of the refined pose over the inliers.
    pub rms_px: f64,
    /// Lowest RMS any raw hypothesis reaches on the same inliers.
    pub raw_rms_px: f64,
}

/// RMS reprojection error of a marker's four corners under `pose`; infinite
/// when a corner falls behind the camera.
pub fn corner_rms(marker: &MarkerSpec, observed: &[[f64; 2]; 4], pose: &Pose6D, intrinsics: &Intrinsics) -> f64 {
    match project_marker(marker, pose, intrinsics) {
        Ok(px) => {
            let ss: f64 = px
                .iter()
                .zip(observed)
                .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
                .sum();
            (ss / 4.0).sqrt()
        }
        Err(_) => f64::INFINITY,
    }
}

fn rms_over(
    pose: &Pose6D,
    members: &[(&MarkerSpec, &[[f64; 2]; 4])],
    intrinsics: &Intrinsics,
) -> f64 {
    let ss: f64 = members
        .iter()
        .map(|(m, o)| corner_rms(m, o, pose, intrinsics).powi(2) * 4.0)
        .sum();
    (ss / (4 * members.len()) as f64).sqrt()
}

/// Picks the marker pose hypothesis that the most markers agree with and
/// refines it over all agreeing corners.
///
/// Each iteration scores one hypothesis (a single marker already fixes the
/// full pose). When `iterations` covers the list, every hypothesis is scored
/// once and the result does not depend on the seed or list order; otherwise
/// `iterations` distinct hypotheses are drawn from `rng`. Ties in inlier
/// count go to the lowest refined RMS.
pub fn ransac_pose_consensus<R: Rng + ?Sized>(
    hypotheses: &[MarkerHypothesis],
    spec: &MarkerCubeSpec,
    intrinsics: &Intrinsics,
    config: &RansacConfig,
    rng: &mut R,
) -> Result<Consensus, GeometryError> {
    if hypotheses.is_empty() {
        return Err(GeometryError::NoHypotheses { found: 0, required: 1 });
    }
    let specs: Vec<&MarkerSpec> = hypotheses
        .iter()
        .map(|h| spec.marker(h.detection.id))
        .collect::<Result<_, _>>()?;

    let inliers_of = |pose: &Pose6D| -> Vec<usize> {
        hypotheses
            .iter()
            .zip(&specs)
            .enumerate()
            .filter(|(_, (h, m))| corner_rms(m, &h.detection.corners, pose, intrinsics) <= config.threshold_px)
            .map(|(i, _)| i)
            .collect()
    };
    let members = |set: &[usize]| -> Vec<(&MarkerSpec, &[[f64; 2]; 4])> {
        set.iter().map(|&i| (specs[i], &hypotheses[i].detection.corners)).collect()
    };

    let n = hypotheses.len();
    let candidates: Vec<usize> = if config.iterations >= n {
        (0..n).collect()
    } else {
        let mut v = index::sample(rng, n, config.iterations).into_vec();
        v.sort_unstable();
        v
    };

    let scored: Vec<(usize, Vec<usize>)> = candidates.iter().map(|&i| (i, inliers_of(&hypotheses[i].pose))).collect();
    let best_count = scored.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    if best_count < config.min_inliers.max(1) {
        return Err(GeometryError::NoConsensus {
            best: best_count,
            required: config.min_inliers,
        });
    }

    // refine every tied leader; keep the lowest refined RMS, then the lowest
    // inlier id list, then the lowest marker id
    let mut best: Option<(f64, Vec<u32>, u32, Pose6D, Vec<usize>)> = None;
    for (i, set) in scored.iter().filter(|(_, s)| s.len() == best_count) {
        let (pose, rms) = refine_pose(&hypotheses[*i].pose, &members(set), intrinsics);
        let mut ids: Vec<u32> = set.iter().map(|&k| hypotheses[k].detection.id).collect();
        ids.sort_unstable();
        let key = (rms, ids, hypotheses[*i].detection.id);
        let better = match &best {
            None => true,
            Some((r, ids_b, id_b, _, _)) => {
                key.0 < *r || (key.0 == *r && (&key.1, key.2) < (ids_b, *id_b))
            }
        };
        if better {
            best = Some((key.0, key.1, key.2, pose, set.clone()));
        }
    }
    let (_, _, _, refined, mut set) = best.expect("at least one leader");

    let rescored = inliers_of(&refined);
    if rescored.len() >= set.len() {
        set = rescored;
    }
    let chosen = members(&set);
    // restart from the raw hypothesis that fits the final set best, so the
    // refined error can only improve on it
    let (raw_rms_px, start) = hypotheses
        .iter()
        .map(|h| (rms_over(&h.pose, &chosen, intrinsics), h.pose))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty");
    let (pose, rms_px) = refine_pose(&start, &chosen, intrinsics);

    let mut inlier_ids: Vec<u32> = set.iter().map(|&k| hypotheses[k].detection.id).collect();
    inlier_ids.sort_unstable();
    Ok(Consensus {
        pose,
        inlier_ids,
        inlier_indices: set,
        rms_px,
        raw_rms_px,
    })
}
