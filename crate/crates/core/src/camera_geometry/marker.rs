use nalgebra::{DVector, Matrix3, Rotation3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Intrinsics, Pose6D};
use crate::lm::{self, LmSettings};

pub const CUBE_FACES: usize = 6;
pub const MARKERS_PER_FACE: usize = 4;

/// One square marker on the cube, corners in the cube-corner frame (mm).
///
/// Corner order is top-left, top-right, bottom-right, bottom-left as seen
/// from outside the cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub id: u32,
    pub face: usize,
    pub corners: [[f64; 3]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerCubeSpec {
    pub edge_length: f64,
    pub markers: Vec<MarkerSpec>,
}

/// Output of an external marker detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerDetection {
    pub id: u32,
    /// Pixel corners, ordered like [`MarkerSpec::corners`].
    pub corners: [[f64; 2]; 4],
    pub confidence: f64,
}

impl MarkerDetection {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.corners.iter().flatten().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidDetection(format!("marker {} has non-finite corners", self.id)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(GeometryError::InvalidDetection(format!(
                "marker {} confidence {} outside [0, 1]",
                self.id, self.confidence
            )));
        }
        Ok(())
    }
}

/// A single-marker camera pose estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerPoseEstimate {
    pub marker_id: u32,
    /// Cube (world) → camera transform.
    pub extrinsic: Pose6D,
    /// RMS corner reprojection error after refinement, pixels.
    pub rms_px: f64,
}

// (outward normal, in-plane u, in-plane v, face origin as multiples of L)
const FACES: [([f64; 3], [f64; 3], [f64; 3], [f64; 3]); CUBE_FACES] = [
    ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
    ([-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]),
    ([0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
    ([0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]),
    ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
    ([0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
];

impl MarkerCubeSpec {
    /// Cube occupying `[0, edge]³` with a 2×2 grid of `marker_size` markers on
    /// every face, ids counting up from `first_id` face by face.
    pub fn standard(edge_length: f64, marker_size: f64, first_id: u32) -> Result<Self, GeometryError> {
        if !(edge_length > 0.0 && marker_size > 0.0 && marker_size <= edge_length / 2.0) {
            return Err(GeometryError::InvalidCube(
                "marker size must be positive and fit a 2×2 grid on each face".into(),
            ));
        }
        let mut markers = Vec::with_capacity(CUBE_FACES * MARKERS_PER_FACE);
        let h = marker_size / 2.0;
        for (face, (_, u, v, o)) in FACES.iter().enumerate() {
            let u = Vector3::from(*u);
            let v = Vector3::from(*v);
            let origin = Vector3::from(*o) * edge_length;
            for (slot, (a, b)) in [(0.25, 0.75), (0.75, 0.75), (0.25, 0.25), (0.75, 0.25)].iter().enumerate() {
                let c = origin + u * (a * edge_length) + v * (b * edge_length);
                let corners = [c - u * h + v * h, c + u * h + v * h, c + u * h - v * h, c - u * h - v * h];
                markers.push(MarkerSpec {
                    id: first_id + (face * MARKERS_PER_FACE + slot) as u32,
                    face,
                    corners: corners.map(Into::into),
                });
            }
        }
        let spec = Self { edge_length, markers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidCube(m));
        if self.markers.len() != CUBE_FACES * MARKERS_PER_FACE {
            return bad(format!("{} markers, expected 24", self.markers.len()));
        }
        let mut per_face = [0usize; CUBE_FACES];
        let mut ids: Vec<u32> = self.markers.iter().map(|m| m.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("marker ids are not distinct".into());
        }
        const TOL: f64 = 1e-6;
        for m in &self.markers {
            if m.face >= CUBE_FACES {
                return bad(format!("marker {} on face {}", m.id, m.face));
            }
            per_face[m.face] += 1;
            let c: Vec<Vector3<f64>> = m.corners.iter().map(|p| Vector3::from(*p)).collect();
            let side = (c[1] - c[0]).norm();
            if !(side > TOL) {
                return bad(format!("marker {} has zero size", m.id));
            }
            for i in 0..4 {
                if ((c[(i + 1) % 4] - c[i]).norm() - side).abs() > TOL {
                    return bad(format!("marker {} sides differ", m.id));
                }
            }
            let diag = side * std::f64::consts::SQRT_2;
            if ((c[2] - c[0]).norm() - diag).abs() > TOL || ((c[3] - c[1]).norm() - diag).abs() > TOL {
                return bad(format!("marker {} is not square", m.id));
            }
            let normal = (c[1] - c[0]).cross(&(c[3] - c[0])).normalize();
            if normal.dot(&(c[2] - c[0])).abs() > TOL {
                return bad(format!("marker {} corners are not coplanar", m.id));
            }
        }
        if per_face.iter().any(|&n| n != MARKERS_PER_FACE) {
            return bad(format!("markers per face {per_face:?}, expected 4 each"));
        }
        Ok(())
    }

    pub fn marker(&self, id: u32) -> Result<&MarkerSpec, GeometryError> {
        self.markers
            .iter()
            .find(|m| m.id == id)
            .ok_or(GeometryError::UnknownMarker(id))
    }
}

/// Projects a cube marker's corners through a camera pose.
pub fn project_marker(
    marker: &MarkerSpec,
    extrinsic: &Pose6D,
    intrinsics: &Intrinsics,
) -> Result<[[f64; 2]; 4], GeometryError> {
    let mut out = [[0.0; 2]; 4];
    for (o, c) in out.iter_mut().zip(&marker.corners) {
        *o = intrinsics.project_camera_point(&extrinsic.transform_point(&Vector3::from(*c)))?;
    }
    Ok(out)
}

/// Orthonormal marker frame: origin at corner 0, x toward corner 1, y toward
/// corner 3.
fn marker_frame(marker: &MarkerSpec) -> (Rotation3<f64>, Vector3<f64>) {
    let c: Vec<Vector3<f64>> = marker.corners.iter().map(|p| Vector3::from(*p)).collect();
    let ex = (c[1] - c[0]).normalize();
    let ey = (c[3] - c[0] - ex * ex.dot(&(c[3] - c[0]))).normalize();
    let ez = ex.cross(&ey);
    (Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[ex, ey, ez])), c[0])
}

fn check_corner_geometry(corners: &[[f64; 2]; 4]) -> Result<(), GeometryError> {
    const MIN_SINE: f64 = 1e-3;
    for skip in 0..4 {
        let tri: Vec<[f64; 2]> = (0..4).filter(|&i| i != skip).map(|i| corners[i]).collect();
        let a = [tri[1][0] - tri[0][0], tri[1][1] - tri[0][1]];
        let b = [tri[2][0] - tri[0][0], tri[2][1] - tri[0][1]];
        let na = a[0].hypot(a[1]);
        let nb = b[0].hypot(b[1]);
        let cross = a[0] * b[1] - a[1] * b[0];
        if na < 1e-9 || nb < 1e-9 || (cross / (na * nb)).abs() < MIN_SINE {
            return Err(GeometryError::UnstableEstimate(
                "three marker corners are collinear".into(),
            ));
        }
    }
    Ok(())
}

/// Similarity transform normalizing points to zero mean, mean distance √2.
fn normalizing_transform(pts: &[[f64; 2]; 4]) -> Matrix3<f64> {
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / 4.0;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / 4.0;
    let d = pts.iter().map(|p| (p[0] - mx).hypot(p[1] - my)).sum::<f64>() / 4.0;
    let s = std::f64::consts::SQRT_2 / d.max(1e-300);
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply(h: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Four-point DLT homography mapping `src` to `dst`.
fn homography_dlt(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Matrix3<f64>, GeometryError> {
    let ts = normalizing_transform(src);
    let td = normalizing_transform(dst);
    // padded with a zero row so the SVD returns the full right basis
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..4 {
        let [x, y] = apply(&ts, src[i]);
        let [u, v] = apply(&td, dst[i]);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| GeometryError::UnstableEstimate("homography SVD failed".into()))?;
    let k = svd.singular_values.imin();
    let h = v_t.row(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| GeometryError::UnstableEstimate("degenerate image corners".into()))?;
    Ok(td_inv * hn * ts)
}

fn nearest_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap_or_else(Matrix3::identity), svd.v_t.unwrap_or_else(Matrix3::identity));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * d * v_t)
}

/// Marker-plane pose from the planar homography, before refinement.
fn planar_pose(
    marker: &MarkerSpec,
    corners: &[[f64; 2]; 4],
    intrinsics: &Intrinsics,
) -> Result<Pose6D, GeometryError> {
    let (frame, origin) = marker_frame(marker);
    let local: [[f64; 2]; 4] = marker.corners.map(|c| {
        let p = frame.inverse() * (Vector3::from(c) - origin);
        [p.x, p.y]
    });
    let image: [[f64; 2]; 4] = corners.map(|px| intrinsics.normalize(px));
    let h = homography_dlt(&local, &image)?;
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let mut scale = 2.0 / (h1.norm() + h2.norm());
    if (h3 * scale).z < 0.0 {
        scale = -scale;
    }
    let r1 = h1 * scale;
    let r2 = h2 * scale;
    let t = h3 * scale;
    let r_plane = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    // camera ← marker plane ← cube
    let r = r_plane * frame.inverse();
    let t_world = t - r * origin;
    Ok(Pose6D::new(&r, &t_world))
}

fn corner_residuals(
    pose: &Pose6D,
    markers: &[(&MarkerSpec, &[[f64; 2]; 4])],
    intrinsics: &Intrinsics,
) -> DVector<f64> {
    let mut r = Vec::with_capacity(markers.len() * 8);
    for (spec, observed) in markers {
        for (c, o) in spec.corners.iter().zip(observed.iter()) {
            let pc = pose.transform_point(&Vector3::from(*c));
            match intrinsics.project_camera_point(&pc) {
                Ok(px) => {
                    r.push(px[0] - o[0]);
                    r.push(px[1] - o[1]);
                }
                // keeps the optimizer away from poses with corners behind the camera
                Err(_) => {
                    r.push(1e6);
                    r.push(1e6);
                }
            }
        }
    }
    DVector::from_vec(r)
}

/// Least-squares refinement of a cube pose over the given marker corners,
/// parameterized as a left perturbation of `start`.
pub(crate) fn refine_pose(
    start: &Pose6D,
    markers: &[(&MarkerSpec, &[[f64; 2]; 4])],
    intrinsics: &Intrinsics,
) -> (Pose6D, f64) {
    let r0 = start.rotation_matrix();
    let t0 = start.translation_vector();
    let perturb = move |x: &DVector<f64>| {
        let dr = Rotation3::from_scaled_axis(Vector3::new(x[0], x[1], x[2]));
        Pose6D::new(&(dr * r0), &(t0 + Vector3::new(x[3], x[4], x[5])))
    };
    let residual = |x: &DVector<f64>| corner_residuals(&perturb(x), markers, intrinsics);
    let steps = [1e-7, 1e-7, 1e-7, 1e-5, 1e-5, 1e-5];
    let settings = LmSettings {
        max_iterations: 50,
        cost_tolerance: 1e-15,
        step_tolerance: 1e-14,
        gradient_tolerance: 1e-14,
        ..LmSettings::default()
    };
    let n = (markers.len() * 4) as f64;
    match lm::minimize(
        residual,
        |x| lm::central_difference_jacobian(&residual, x, &steps),
        DVector::zeros(6),
        &settings,
    ) {
        Ok(report) => (perturb(&report.x), (report.cost / n).sqrt()),
        Err(_) => {
            let r = corner_residuals(start, markers, intrinsics);
            (*start, (r.norm_squared() / n).sqrt())
        }
    }
}

/// Camera pose hypothesis from a single marker with ordered corners.
pub fn estimate_marker_pose(
    detection: &MarkerDetection,
    spec: &MarkerCubeSpec,
    intrinsics: &Intrinsics,
) -> Result<MarkerPoseEstimate, GeometryError> {
    detection.validate()?;
    let marker = spec.marker(detection.id)?;
    check_corner_geometry(&detection.corners)?;
    let initial = planar_pose(marker, &detection.corners, intrinsics)?;
    let (extrinsic, rms_px) = refine_pose(&initial, &[(marker, &detection.corners)], intrinsics);
    if !rms_px.is_finite() {
        return Err(GeometryError::UnstableEstimate("non-finite reprojection error".into()));
    }
    Ok(MarkerPoseEstimate {
        marker_id: detection.id,
        extrinsic,
        rms_px,
    })
}

/// Pose from a marker whose corner order is unknown up to a cyclic shift.
///
/// Every cyclic ordering is tried; if more than one fits within
/// `tolerance_px` the in-plane rotation cannot be resolved and the estimate
/// is reported as ambiguous. A square marker always is.
pub fn estimate_marker_pose_unordered(
    detection: &MarkerDetection,
    spec: &MarkerCubeSpec,
    intrinsics: &Intrinsics,
    tolerance_px: f64,
) -> Result<MarkerPoseEstimate, GeometryError> {
    let mut fits = Vec::new();
    for shift in 0..4 {
        let mut d = detection.clone();
        d.corners = std::array::from_fn(|i| detection.corners[(i + shift) % 4]);
        if let Ok(est) = estimate_marker_pose(&d, spec, intrinsics) {
            if est.rms_px <= tolerance_px {
                fits.push(est);
            }
        }
    }
    match fits.len() {
        0 => Err(GeometryError::UnstableEstimate("no corner ordering fits".into())),
        1 => Ok(fits.remove(0)),
        n => Err(GeometryError::Ambiguous { candidates: n }),
    }
}
