//! Central finite differences, the independent gradient oracle used by the
//! test suites.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Step for one parameter: relative with an absolute floor.
pub fn fd_step<T: Real>(value: T, rel_step: T) -> T {
    (value.abs() * rel_step).max(T::c(1e-6))
}

/// Central-difference gradient of `f` at `params`.
///
/// Fails naming the parameter index if the loss is non-finite at either
/// perturbation.
pub fn finite_diff_gradient<T: Real>(
    f: &mut dyn FnMut(&[T]) -> T,
    params: &[T],
    rel_step: T,
) -> Result<Vec<T>> {
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let h = fd_step(params[i], rel_step);
        work[i] = params[i] + h;
        let fp = f(&work);
        work[i] = params[i] - h;
        let fm = f(&work);
        work[i] = params[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Precondition(format!(
                "non-finite loss at perturbation of parameter {i}"
            )));
        }
        grad.push((fp - fm) / (h + h));
    }
    Ok(grad)
}

/// Relative agreement check with an absolute floor, the convention used by
/// every gradient suite in this crate.
pub fn grads_agree<T: Real>(analytic: T, numeric: T, rel_tol: T, abs_floor: T) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel_tol * analytic.abs().max(numeric.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic() {
        let mut f = |p: &[f64]| p[0] * p[0];
        let g = finite_diff_gradient(&mut f, &[3.0], 1e-4).unwrap();
        assert_relative_eq!(g[0], 6.0, epsilon = 1e-6);
    }

    #[test]
    fn linear_is_exact() {
        let mut f = |p: &[f64]| 2.5 * p[0] - 0.7 * p[1];
        for step in [1e-2, 1e-4, 1e-6] {
            let g = finite_diff_gradient(&mut f, &[0.3, -4.0], step).unwrap();
            assert_relative_eq!(g[0], 2.5, epsilon = 1e-7);
            assert_relative_eq!(g[1], -0.7, epsilon = 1e-7);
        }
    }

    #[test]
    fn non_finite_is_flagged() {
        // sqrt goes NaN on the negative side of the perturbation.
        let mut f = |p: &[f64]| p[0].sqrt();
        let err = finite_diff_gradient(&mut f, &[0.0], 1e-4);
        assert!(err.is_err());
    }
}
