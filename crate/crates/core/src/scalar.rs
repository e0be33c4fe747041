//! Scalar abstraction shared by the whole crate.
//!
//! All core math is generic over [`Real`] so the same code paths run in f32
//! and f64. The training pipeline and CLI instantiate [`crate::Fp`] (f64).

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: f32 or f64.
pub trait Real:
    nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + std::iter::Sum<Self>
{
    /// Lift an f64 constant into the scalar type.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable")
    }

    /// Lower to f64 for logging and serialization.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Logistic sigmoid.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Inverse of [`sigmoid`]; input must lie in (0, 1).
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_logit_roundtrip() {
        for &p in &[0.01f64, 0.1, 0.5, 0.9, 0.99] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_lift() {
        assert_eq!(<f32 as Real>::c(0.5), 0.5f32);
        assert_eq!(<f64 as Real>::c(0.25), 0.25f64);
    }
}
