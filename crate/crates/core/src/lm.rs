//! Dense Levenberg–Marquardt solver for small nonlinear least-squares
//! problems, with a central-difference Jacobian helper.
//!
//! The objective is `Σ rᵢ²`. Steps solve `(JᵀJ + λ·D) δ = −Jᵀr` with `D` the
//! diagonal of `JᵀJ` (floored so that flat directions stay damped). A step is
//! accepted only when it strictly lowers the objective.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_damping: f64,
    /// Converged once an accepted step lowers the objective by less than this
    /// fraction of its previous value.
    pub cost_tolerance: f64,
    /// Converged once `‖δ‖ ≤ step_tolerance · (‖x‖ + step_tolerance)`.
    pub step_tolerance: f64,
    /// Converged once `‖Jᵀr‖∞` drops to this value.
    pub gradient_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            max_damping: 1e12,
            cost_tolerance: 1e-12,
            step_tolerance: 1e-12,
            gradient_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    Converged,
    MaxIterations,
    /// Damping exceeded `max_damping` without finding a decreasing step.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub status: LmStatus,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    /// Parameter vectors matching `trace` entry for entry.
    pub iterates: Vec<DVector<f64>>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LmError {
    #[error("objective is not finite at the initial point")]
    NonFiniteStart,
    #[error("jacobian has {rows}x{cols} entries, expected {expected_rows}x{expected_cols}")]
    JacobianShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
}

/// Central-difference Jacobian of `f` at `x` with one step per parameter.
pub fn central_difference_jacobian<F>(f: &F, x: &DVector<f64>, steps: &[f64]) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut probe = x.clone();
    for j in 0..n {
        let h = steps[j];
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        cols.push((plus - minus) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, n, |r, c| cols[c][r])
}

fn cost_of(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Minimizes `Σ residuals(x)²` starting from `x0`.
pub fn minimize<F, J>(
    residuals: F,
    jacobian: J,
    x0: DVector<f64>,
    settings: &LmSettings,
) -> Result<LmReport, LmError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let n = x0.len();
    let mut x = x0;
    let mut r = residuals(&x);
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(LmError::NonFiniteStart);
    }
    let mut lambda = settings.initial_damping;
    let mut trace = vec![cost];
    let mut iterates = vec![x.clone()];
    let mut iterations = 0;
    let mut status = LmStatus::MaxIterations;

    'outer: while iterations < settings.max_iterations {
        let jac = jacobian(&x);
        if jac.nrows() != r.len() || jac.ncols() != n {
            return Err(LmError::JacobianShape {
                rows: jac.nrows(),
                cols: jac.ncols(),
                expected_rows: r.len(),
                expected_cols: n,
            });
        }
        let g = jac.tr_mul(&r);
        if g.amax() <= settings.gradient_tolerance {
            status = LmStatus::Converged;
            break;
        }
        let jtj = jac.tr_mul(&jac);
        let diag_floor = jtj.diagonal().amax().max(1.0) * 1e-12;
        iterations += 1;

        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= settings.damping_up;
                if lambda > settings.max_damping {
                    status = LmStatus::Stalled;
                    break 'outer;
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            if delta.norm() <= settings.step_tolerance * (x.norm() + settings.step_tolerance) {
                status = LmStatus::Converged;
                break 'outer;
            }
            let candidate = &x + &delta;
            let r_new = residuals(&candidate);
            let cost_new = cost_of(&r_new);
            if cost_new.is_finite() && cost_new < cost {
                let decrease = cost - cost_new;
                x = candidate;
                r = r_new;
                let previous = cost;
                cost = cost_new;
                trace.push(cost);
                iterates.push(x.clone());
                lambda = (lambda * settings.damping_down).max(1e-15);
                if decrease <= settings.cost_tolerance * previous {
                    status = LmStatus::Converged;
                    break 'outer;
                }
                break;
            }
            lambda *= settings.damping_up;
            if lambda > settings.max_damping {
                status = LmStatus::Stalled;
                break 'outer;
            }
        }
    }

    Ok(LmReport {
        x,
        cost,
        iterations,
        status,
        trace,
        iterates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])
    }

    #[test]
    fn solves_rosenbrock() {
        let steps = [1e-6, 1e-6];
        let report = minimize(
            rosenbrock,
            |x| central_difference_jacobian(&rosenbrock, x, &steps),
            DVector::from_vec(vec![-1.2, 1.0]),
            &LmSettings::default(),
        )
        .unwrap();
        assert_eq!(report.status, LmStatus::Converged);
        assert!((report.x[0] - 1.0).abs() < 1e-8);
        assert!((report.x[1] - 1.0).abs() < 1e-8);
        assert!(report.trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn fits_exponential_decay() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let f = |p: &DVector<f64>| {
            DVector::from_iterator(ts.len(), ts.iter().zip(&ys).map(|(t, y)| p[0] * (-p[1] * t).exp() - y))
        };
        let report = minimize(
            f,
            |x| central_difference_jacobian(&f, x, &[1e-6, 1e-6]),
            DVector::from_vec(vec![1.0, 0.1]),
            &LmSettings::default(),
        )
        .unwrap();
        assert!((report.x[0] - 3.0).abs() < 1e-7);
        assert!((report.x[1] - 0.7).abs() < 1e-7);
    }

    #[test]
    fn zero_residual_start_is_converged() {
        let f = |x: &DVector<f64>| x.clone();
        let report = minimize(
            f,
            |x| central_difference_jacobian(&f, x, &[1e-6; 3]),
            DVector::zeros(3),
            &LmSettings::default(),
        )
        .unwrap();
        assert_eq!(report.status, LmStatus::Converged);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let f = |_: &DVector<f64>| DVector::from_element(1, f64::NAN);
        let err = minimize(f, |_| DMatrix::zeros(1, 1), DVector::zeros(1), &LmSettings::default())
            .unwrap_err();
        assert_eq!(err, LmError::NonFiniteStart);
    }
}
