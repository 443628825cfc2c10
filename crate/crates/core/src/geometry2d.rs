//! Planar polygon helpers for hand masks and occluders.

pub type Point2 = [f64; 2];

const ON_EDGE_EPS: f64 = 1e-9;

fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point2, b: Point2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Euclidean distance from `p` to the closed segment `a`–`b`.
pub fn distance_to_segment(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(ap, ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let closest = [a[0] + t * ab[0], a[1] + t * ab[1]];
    let d = sub(p, closest);
    dot(d, d).sqrt()
}

fn orientation(a: Point2, b: Point2, c: Point2) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    p[0] >= a[0].min(b[0]) - ON_EDGE_EPS
        && p[0] <= a[0].max(b[0]) + ON_EDGE_EPS
        && p[1] >= a[1].min(b[1]) - ON_EDGE_EPS
        && p[1] <= a[1].max(b[1]) + ON_EDGE_EPS
}

/// True when the closed segments `p1`–`p2` and `q1`–`q2` share a point.
pub fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, q1, q2))
        || (d2 == 0.0 && on_segment(p2, q1, q2))
        || (d3 == 0.0 && on_segment(q1, p1, p2))
        || (d4 == 0.0 && on_segment(q2, p1, p2))
}

/// A polygon is simple when it has at least three vertices and no two
/// non-adjacent edges touch.
pub fn is_simple_polygon(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        if a1 == a2 {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

/// Point-in-polygon test with the boundary counted as inside.
pub fn point_in_polygon(p: Point2, poly: &[Point2]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if distance_to_segment(p, a, b) <= ON_EDGE_EPS {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > p[1]) != (pj[1] > p[1]) {
            let x = pj[0] + (p[1] - pj[1]) * (pi[0] - pj[0]) / (pi[1] - pj[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Convex hull in counter-clockwise order (monotone chain). Collinear points
/// are dropped.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orientation(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orientation(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Offsets a counter-clockwise convex polygon outward by `margin` using
/// mitred corners. Fewer than three vertices fall back to the dilated
/// bounding box.
pub fn dilate_convex(hull: &[Point2], margin: f64) -> Vec<Point2> {
    if hull.len() < 3 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in hull {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if hull.is_empty() {
            return Vec::new();
        }
        return vec![
            [lo[0] - margin, lo[1] - margin],
            [hi[0] + margin, lo[1] - margin],
            [hi[0] + margin, hi[1] + margin],
            [lo[0] - margin, hi[1] + margin],
        ];
    }
    let n = hull.len();
    let normal = |a: Point2, b: Point2| {
        let e = sub(b, a);
        let len = dot(e, e).sqrt();
        // outward normal of a CCW edge
        [e[1] / len, -e[0] / len]
    };
    (0..n)
        .map(|i| {
            let prev = hull[(i + n - 1) % n];
            let cur = hull[i];
            let next = hull[(i + 1) % n];
            let n1 = normal(prev, cur);
            let n2 = normal(cur, next);
            let k = margin / (1.0 + dot(n1, n2));
            [cur[0] + k * (n1[0] + n2[0]), cur[1] + k * (n1[1] + n2[1])]
        })
        .collect()
}
