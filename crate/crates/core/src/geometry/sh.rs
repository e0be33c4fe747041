//! Real spherical harmonics up to order 3, in the ordering conventional for
//! splatting renderers. Coefficients are stored basis-major: one rgb triple
//! per basis function, so an order-d surfel carries 3*(d+1)^2 scalars.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAX_ORDER: usize = 3;
/// Number of basis functions at the maximum order.
pub const MAX_BASIS: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of SH scalars (3 channels per basis function) at `order`.
pub fn sh_coeff_count(order: usize) -> Result<usize> {
    if order > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "sh order {order} out of range 0..=3"
        )));
    }
    Ok(3 * (order + 1) * (order + 1))
}

/// Number of basis functions (rgb triples) at `order`.
pub fn sh_basis_count(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// Index range of the basis functions belonging exactly to band `order`.
pub fn sh_band_range(order: usize) -> std::ops::Range<usize> {
    order * order..(order + 1) * (order + 1)
}

/// Evaluate all basis functions up to `order` at a unit direction.
pub fn sh_basis<T: Real>(order: usize, dir: &Vector3<T>) -> [T; MAX_BASIS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [T::zero(); MAX_BASIS];
    b[0] = T::c(C0);
    if order >= 1 {
        b[1] = -T::c(C1) * y;
        b[2] = T::c(C1) * z;
        b[3] = -T::c(C1) * x;
    }
    if order >= 2 {
        let two = T::c(2.0);
        b[4] = T::c(C2[0]) * x * y;
        b[5] = T::c(C2[1]) * y * z;
        b[6] = T::c(C2[2]) * (two * z * z - x * x - y * y);
        b[7] = T::c(C2[3]) * x * z;
        b[8] = T::c(C2[4]) * (x * x - y * y);
    }
    if order >= 3 {
        let three = T::c(3.0);
        let four = T::c(4.0);
        let two = T::c(2.0);
        b[9] = T::c(C3[0]) * y * (three * x * x - y * y);
        b[10] = T::c(C3[1]) * x * y * z;
        b[11] = T::c(C3[2]) * y * (four * z * z - x * x - y * y);
        b[12] = T::c(C3[3]) * z * (two * z * z - three * x * x - three * y * y);
        b[13] = T::c(C3[4]) * x * (four * z * z - x * x - y * y);
        b[14] = T::c(C3[5]) * z * (x * x - y * y);
        b[15] = T::c(C3[6]) * x * (x * x - three * y * y);
    }
    b
}

/// Gradient of each basis function with respect to the direction.
pub fn sh_basis_grad<T: Real>(order: usize, dir: &Vector3<T>) -> [Vector3<T>; MAX_BASIS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let zero = Vector3::zeros();
    let mut g = [zero; MAX_BASIS];
    if order >= 1 {
        g[1] = Vector3::new(T::zero(), -T::c(C1), T::zero());
        g[2] = Vector3::new(T::zero(), T::zero(), T::c(C1));
        g[3] = Vector3::new(-T::c(C1), T::zero(), T::zero());
    }
    if order >= 2 {
        let two = T::c(2.0);
        let four = T::c(4.0);
        g[4] = Vector3::new(y, x, T::zero()) * T::c(C2[0]);
        g[5] = Vector3::new(T::zero(), z, y) * T::c(C2[1]);
        g[6] = Vector3::new(-two * x, -two * y, four * z) * T::c(C2[2]);
        g[7] = Vector3::new(z, T::zero(), x) * T::c(C2[3]);
        g[8] = Vector3::new(two * x, -two * y, T::zero()) * T::c(C2[4]);
    }
    if order >= 3 {
        let two = T::c(2.0);
        let three = T::c(3.0);
        let four = T::c(4.0);
        let six = T::c(6.0);
        let eight = T::c(8.0);
        g[9] = Vector3::new(six * x * y, three * x * x - three * y * y, T::zero()) * T::c(C3[0]);
        g[10] = Vector3::new(y * z, x * z, x * y) * T::c(C3[1]);
        g[11] = Vector3::new(
            -two * x * y,
            four * z * z - x * x - three * y * y,
            eight * y * z,
        ) * T::c(C3[2]);
        g[12] = Vector3::new(
            -six * x * z,
            -six * y * z,
            six * z * z - three * x * x - three * y * y,
        ) * T::c(C3[3]);
        g[13] = Vector3::new(
            four * z * z - three * x * x - y * y,
            -two * x * y,
            eight * x * z,
        ) * T::c(C3[4]);
        g[14] = Vector3::new(two * x * z, -two * y * z, x * x - y * y) * T::c(C3[5]);
        g[15] = Vector3::new(three * x * x - three * y * y, -six * x * y, T::zero()) * T::c(C3[6]);
    }
    g
}

/// Unclamped SH radiance: sum of coefficient * basis, without the 0.5 offset.
pub fn sh_eval_raw<T: Real>(
    coeffs: &[Vector3<T>],
    order: usize,
    dir: &Vector3<T>,
) -> Result<Vector3<T>> {
    let n = sh_basis_count(order);
    if coeffs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "sh coefficient count {} does not match order {} (expected {})",
            coeffs.len() * 3,
            order,
            n * 3
        )));
    }
    let basis = sh_basis(order, dir);
    let mut out = Vector3::zeros();
    for (c, b) in coeffs.iter().zip(basis.iter().take(n)) {
        out += c * *b;
    }
    Ok(out)
}

/// View-dependent rgb color: clamp(sum + 0.5, 0, 1) per channel.
pub fn sh_eval<T: Real>(
    coeffs: &[Vector3<T>],
    order: usize,
    dir: &Vector3<T>,
) -> Result<Vector3<T>> {
    let raw = sh_eval_raw(coeffs, order, dir)?;
    let half = T::c(0.5);
    Ok(raw.map(|v| (v + half).clamp(T::zero(), T::one())))
}

/// Reverse pass of [`sh_eval`]: given the adjoint of the clamped color,
/// accumulate gradients into the coefficients and return the gradient with
/// respect to the direction.
pub fn sh_eval_backward<T: Real>(
    coeffs: &[Vector3<T>],
    order: usize,
    dir: &Vector3<T>,
    upstream: &Vector3<T>,
    coeff_grads: &mut [Vector3<T>],
) -> Vector3<T> {
    debug_assert_eq!(coeffs.len(), sh_basis_count(order));
    debug_assert_eq!(coeff_grads.len(), coeffs.len());
    let n = sh_basis_count(order);
    let basis = sh_basis(order, dir);
    let raw = sh_eval_raw(coeffs, order, dir).expect("validated coeff length");
    let half = T::c(0.5);
    // Clamp passes gradient only where the pre-clamp value is interior.
    let mask = raw.map(|v| {
        let s = v + half;
        if s > T::zero() && s < T::one() {
            T::one()
        } else {
            T::zero()
        }
    });
    let up = Vector3::new(
        upstream.x * mask.x,
        upstream.y * mask.y,
        upstream.z * mask.z,
    );
    let bgrad = sh_basis_grad(order, dir);
    let mut dir_grad = Vector3::zeros();
    for i in 0..n {
        coeff_grads[i] += up * basis[i];
        dir_grad += bgrad[i] * coeffs[i].dot(&up);
    }
    dir_grad
}
