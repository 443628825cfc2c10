use nalgebra::{DMatrix, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{CameraModel, GeometryError};

/// Rays closer to parallel than this are flagged.
const MIN_RAY_ANGLE: f64 = 1e-2;
const MIN_SINGULAR_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangulation {
    pub point: [f64; 3],
    /// Widest angle between any two viewing rays, radians.
    pub max_ray_angle: f64,
    /// Set when the rays are nearly parallel and the depth is unreliable.
    pub ill_conditioned: bool,
}

/// Linear (DLT) triangulation in normalized image coordinates.
pub fn triangulate(observations: &[[f64; 2]], cameras: &[CameraModel]) -> Result<Triangulation, GeometryError> {
    if observations.len() != cameras.len() {
        return Err(GeometryError::ViewMismatch(observations.len(), cameras.len()));
    }
    if cameras.len() < 2 {
        return Err(GeometryError::InsufficientViews(cameras.len()));
    }
    if observations.iter().flatten().any(|c| !c.is_finite()) {
        return Err(GeometryError::Degenerate("non-finite observation".into()));
    }
    let mut a = DMatrix::<f64>::zeros(2 * cameras.len(), 4);
    for (i, (obs, cam)) in observations.iter().zip(cameras).enumerate() {
        let [x, y] = cam.intrinsics.normalize(*obs);
        let p = cam.normalized_projection();
        a.row_mut(2 * i).copy_from(&(p.row(2) * x - p.row(0)));
        a.row_mut(2 * i + 1).copy_from(&(p.row(2) * y - p.row(1)));
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| GeometryError::Degenerate("triangulation SVD failed".into()))?;
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = Vector4::from_iterator(v_t.row(order[0]).iter().copied());
    let second = Vector4::from_iterator(v_t.row(order[1]).iter().copied());
    let sigma_max = svd.singular_values[order[3]];
    let rank_deficient = svd.singular_values[order[1]] <= MIN_SINGULAR_RATIO * sigma_max;

    // with a two-dimensional null space every point on the shared ray fits;
    // take the finite one closest to the affine chart
    let h = if rank_deficient {
        let v = smallest * smallest[3] + second * second[3];
        if v.norm() > 0.0 { v } else { smallest }
    } else {
        smallest
    };
    if h[3].abs() < f64::EPSILON * h.norm() {
        return Err(GeometryError::Degenerate("triangulated point at infinity".into()));
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let rays: Vec<Vector3<f64>> = cameras.iter().map(|c| (point - c.center()).normalize()).collect();
    let mut max_ray_angle: f64 = 0.0;
    for i in 0..rays.len() {
        for j in (i + 1)..rays.len() {
            let angle = rays[i].cross(&rays[j]).norm().atan2(rays[i].dot(&rays[j]));
            if angle.is_finite() {
                max_ray_angle = max_ray_angle.max(angle);
            }
        }
    }
    Ok(Triangulation {
        point: point.into(),
        max_ray_angle,
        ill_conditioned: rank_deficient || max_ray_angle < MIN_RAY_ANGLE,
    })
}
