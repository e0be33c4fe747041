//! Adam with per-group learning rates. Non-finite gradients are skipped
//! (the parameter keeps its value) and counted.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-15;

/// Moment buffers for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T: Real> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update over the whole group. Returns the number of parameters
    /// skipped for non-finite gradients.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) -> usize {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let b1 = T::c(BETA1);
        let b2 = T::c(BETA2);
        let eps = T::c(EPS);
        let bc1 = T::one() - T::c(BETA1.powi(self.step as i32));
        let bc2 = T::one() - T::c(BETA2.powi(self.step as i32));
        let mut skipped = 0;
        for i in 0..params.len() {
            let g = grads[i];
            if !g.is_finite() {
                skipped += 1;
                continue;
            }
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        skipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        // Bias correction makes the first update exactly −lr·g/(|g| + ε).
        let mut state = AdamState::<f64>::new(1);
        let mut p = [3.0];
        state.step(&mut p, &[1.0], 0.1);
        assert_relative_eq!(p[0], 2.9, epsilon = 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut state = AdamState::<f64>::new(2);
        let mut p = [1.0, 2.0];
        state.step(&mut p, &[0.0, 0.0], 0.1);
        assert_eq!(p, [1.0, 2.0]);
    }

    #[test]
    fn nonfinite_gradient_is_skipped_and_counted() {
        let mut state = AdamState::<f64>::new(2);
        let mut p = [1.0, 2.0];
        let skipped = state.step(&mut p, &[f64::NAN, 1.0], 0.1);
        assert_eq!(skipped, 1);
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 2.0);
        assert!(state.m.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut state = AdamState::<f64>::new(1);
        let mut p = [5.0];
        for _ in 0..2000 {
            let g = 2.0 * p[0];
            state.step(&mut p, &[g], 0.01);
        }
        assert!(p[0].abs() < 1e-3, "{}", p[0]);
    }
}
