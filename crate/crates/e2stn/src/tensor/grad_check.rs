//! Finite-difference gradient checking.

use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central-difference gradient of a scalar function at `theta`.
/// Errors if the function value is non-finite at any perturbed point.
pub fn central_diff_grad<F>(mut f: F, theta: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut point = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        point[i] = theta[i] + eps;
        let fp = f(&point)?;
        point[i] = theta[i] - eps;
        let fm = f(&point)?;
        point[i] = theta[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite { op: "central_diff_grad" });
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}

/// `max_i |a_i - n_i| / max(1, |a_i|, |n_i|)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / 1.0_f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

/// Compare an analytic gradient against central finite differences of `f`
/// at `theta`; returns the maximum relative error over all coordinates.
pub fn grad_check<F>(f: F, theta: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != theta.len() {
        return Err(Error::Dimension {
            op: "grad_check",
            shape: vec![analytic.len()],
            msg: format!("analytic gradient length != parameter count {}", theta.len()),
        });
    }
    let numeric = central_diff_grad(f, theta, eps)?;
    Ok(max_rel_error(analytic, &numeric))
}
