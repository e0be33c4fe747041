//! Confidence supervision for both branches: the per-surfel gradient
//! indicator (Appendix Eq. 2) and the per-ray error/entropy targets
//! (Appendix Eqs. 3–4).

use nalgebra::Vector3;

use crate::scalar::Real;

/// Appendix Eq. (2): 1 iff the radiance gradient is small and the geometry
/// gradient is large. Depends only on the two threshold comparisons.
pub fn confidence_gt<T: Real>(g_rad_norm: T, g_geo_norm: T, zeta_rad: T, zeta_geo: T) -> T {
    if g_rad_norm < zeta_rad && g_geo_norm > zeta_geo {
        T::one()
    } else {
        T::zero()
    }
}

/// Appendix Eq. (4) reconstruction-error target: E = 1 − channel-mean
/// absolute error, so E ∈ [0, 1] for colors in [0, 1].
pub fn color_error_target<T: Real>(rendered: &Vector3<T>, gt: &Vector3<T>) -> T {
    let d = rendered - gt;
    T::one() - (d.x.abs() + d.y.abs() + d.z.abs()) / T::c(3.0)
}

/// Appendix Eqs. (3)–(4): mean over rays of ‖F_v − E‖² + λ_H‖F_v − H‖²,
/// with E and H detached targets.
pub fn l_conf_volume<T: Real>(f_v: &[T], e: &[T], entropy: &[T], lambda_h: T) -> T {
    if f_v.is_empty() {
        return T::zero();
    }
    let mut sum = T::zero();
    for i in 0..f_v.len() {
        let de = f_v[i] - e[i];
        let dh = f_v[i] - entropy[i];
        sum += de * de + lambda_h * dh * dh;
    }
    sum / T::c(f_v.len() as f64)
}

/// Backward of [`l_conf_volume`] with respect to the rendered confidences.
pub fn l_conf_volume_backward<T: Real>(
    f_v: &[T],
    e: &[T],
    entropy: &[T],
    lambda_h: T,
    upstream: T,
    f_bar: &mut [T],
) -> T {
    if f_v.is_empty() {
        return T::zero();
    }
    let scale = upstream * T::c(2.0) / T::c(f_v.len() as f64);
    let mut sum = T::zero();
    for i in 0..f_v.len() {
        let de = f_v[i] - e[i];
        let dh = f_v[i] - entropy[i];
        sum += de * de + lambda_h * dh * dh;
        f_bar[i] += scale * (de + lambda_h * dh);
    }
    sum / T::c(f_v.len() as f64)
}

/// Per-surfel confidence loss: squared error between the activated f_g and
/// the 0/1 target; returns (loss, d loss / d f_g).
pub fn l_conf_surfel<T: Real>(f_g: T, target: T) -> (T, T) {
    let d = f_g - target;
    (d * d, T::c(2.0) * d)
}
