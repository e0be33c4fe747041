//! Appendix Eq. (5) regularizers: normal-map curvature, binary-encouraging
//! opacity, and the rendered-mask term.

use nalgebra::Vector3;

use crate::geometry::maps::{ScalarMap, VectorMap};
use crate::geometry::Surfel;
use crate::render::SurfelGrads;
use crate::scalar::Real;

/// Curvature as squared finite-difference total variation of the rendered
/// normal map, averaged over covered neighbor pairs.
pub fn l_curv<T: Real>(normal: &VectorMap<T>) -> T {
    l_curv_impl(normal, T::zero(), None)
}

/// Backward of [`l_curv`] into the normal-map adjoint; returns the loss.
pub fn l_curv_backward<T: Real>(
    normal: &VectorMap<T>,
    upstream: T,
    normal_bar: &mut VectorMap<T>,
) -> T {
    l_curv_impl(normal, upstream, Some(normal_bar))
}

fn l_curv_impl<T: Real>(
    normal: &VectorMap<T>,
    upstream: T,
    mut normal_bar: Option<&mut VectorMap<T>>,
) -> T {
    let (w, h) = (normal.width, normal.height);
    let covered = |v: &Vector3<T>| v.norm_squared() > T::c(1e-12);
    let mut pairs: usize = 0;
    for y in 0..h {
        for x in 0..w {
            let a = &normal.data[y * w + x];
            if !covered(a) {
                continue;
            }
            if x + 1 < w && covered(&normal.data[y * w + x + 1]) {
                pairs += 1;
            }
            if y + 1 < h && covered(&normal.data[(y + 1) * w + x]) {
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return T::zero();
    }
    let inv = T::one() / T::c(pairs as f64);
    let mut sum = T::zero();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let a = normal.data[idx];
            if !covered(&a) {
                continue;
            }
            for nidx in [
                (x + 1 < w).then(|| idx + 1),
                (y + 1 < h).then(|| idx + w),
            ]
            .into_iter()
            .flatten()
            {
                let b = normal.data[nidx];
                if !covered(&b) {
                    continue;
                }
                let d = a - b;
                sum += d.norm_squared();
                if let Some(ref mut bar) = normal_bar {
                    let g = d * (T::c(2.0) * inv * upstream);
                    bar.data[idx] += g;
                    bar.data[nidx] -= g;
                }
            }
        }
    }
    sum * inv
}

/// Mean of o·(1−o) over all surfels, pushing opacities toward {0, 1}.
pub fn l_opac<T: Real>(surfels: &[Surfel<T>]) -> T {
    if surfels.is_empty() {
        return T::zero();
    }
    let sum: T = surfels
        .iter()
        .map(|s| {
            let o = s.opacity();
            o * (T::one() - o)
        })
        .sum();
    sum / T::c(surfels.len() as f64)
}

/// Backward of [`l_opac`] straight into the opacity-logit gradients.
pub fn l_opac_backward<T: Real>(surfels: &[Surfel<T>], upstream: T, grads: &mut SurfelGrads<T>) -> T {
    if surfels.is_empty() {
        return T::zero();
    }
    let inv = upstream / T::c(surfels.len() as f64);
    let mut sum = T::zero();
    for (i, s) in surfels.iter().enumerate() {
        let o = s.opacity();
        sum += o * (T::one() - o);
        // d/d logit of o(1−o) = (1−2o)·o(1−o).
        grads.opacity_logit[i] += inv * (T::one() - T::c(2.0) * o) * o * (T::one() - o);
    }
    sum / T::c(surfels.len() as f64)
}

/// L1 between the rendered coverage and the ground-truth mask.
pub fn l_mask<T: Real>(alpha: &ScalarMap<T>, mask: &ScalarMap<T>) -> T {
    let mut sum = T::zero();
    for i in 0..alpha.data.len() {
        sum += (alpha.data[i] - mask.data[i]).abs();
    }
    sum / T::c(alpha.data.len() as f64)
}

/// Backward of [`l_mask`] into the alpha-map adjoint; returns the loss.
pub fn l_mask_backward<T: Real>(
    alpha: &ScalarMap<T>,
    mask: &ScalarMap<T>,
    upstream: T,
    alpha_bar: &mut ScalarMap<T>,
) -> T {
    let inv = upstream / T::c(alpha.data.len() as f64);
    let mut sum = T::zero();
    for i in 0..alpha.data.len() {
        let d = alpha.data[i] - mask.data[i];
        sum += d.abs();
        alpha_bar.data[i] += inv * d.signum();
    }
    sum / T::c(alpha.data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Buffer2;
    use crate::scene::fd::grads_agree;
    use crate::scene::testgen;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn constant_normal_map_has_zero_curvature() {
        let map = Buffer2::filled(8, 8, Vector3::new(0.0, 0.0, -1.0f64));
        assert_eq!(l_curv(&map), 0.0);
    }

    #[test]
    fn curvature_gradient_matches_finite_differences() {
        let mut rng = testgen::rng(3);
        let mut map = Buffer2::filled(8, 8, Vector3::zeros());
        for v in map.data.iter_mut() {
            *v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0f64),
            );
        }
        // A hole: adjoints must skip it.
        map.data[27] = Vector3::zeros();
        let mut bar = Buffer2::filled(8, 8, Vector3::zeros());
        l_curv_backward(&map, 1.0, &mut bar);
        let h = 1e-6;
        for i in (0..64).step_by(5) {
            for ch in 0..3 {
                let mut mp = map.clone();
                mp.data[i][ch] += h;
                let mut mm = map.clone();
                mm.data[i][ch] -= h;
                let fd = (l_curv(&mp) - l_curv(&mm)) / (2.0 * h);
                assert!(
                    grads_agree(bar.data[i][ch], fd, 1e-3, 1e-6),
                    "pixel {i} ch {ch}"
                );
            }
        }
    }

    #[test]
    fn opacity_regularizer() {
        let mut rng = testgen::rng(4);
        let mut surfels = testgen::random_surfels::<f64>(&mut rng, 6, 0.5);
        let hand: f64 = surfels
            .iter()
            .map(|s| s.opacity() * (1.0 - s.opacity()))
            .sum::<f64>()
            / 6.0;
        assert_relative_eq!(l_opac(&surfels), hand, epsilon = 1e-12);

        let mut grads = crate::render::SurfelGrads::zeros_like(&surfels);
        l_opac_backward(&surfels, 1.0, &mut grads);
        let h = 1e-6;
        for i in 0..surfels.len() {
            let orig = surfels[i].opacity_logit;
            surfels[i].opacity_logit = orig + h;
            let up = l_opac(&surfels);
            surfels[i].opacity_logit = orig - h;
            let dn = l_opac(&surfels);
            surfels[i].opacity_logit = orig;
            assert!(grads_agree(grads.opacity_logit[i], (up - dn) / (2.0 * h), 1e-3, 1e-9));
        }

        // Saturated opacities give zero loss.
        for s in surfels.iter_mut() {
            s.opacity_logit = 60.0;
        }
        assert!(l_opac(&surfels) < 1e-12);
    }

    #[test]
    fn mask_loss() {
        let a = Buffer2::filled(4, 4, 0.7f64);
        let m = Buffer2::filled(4, 4, 1.0f64);
        assert_relative_eq!(l_mask(&a, &m), 0.3, epsilon = 1e-12);
        assert_eq!(l_mask(&m, &m), 0.0);
        let mut bar = Buffer2::filled(4, 4, 0.0f64);
        l_mask_backward(&a, &m, 1.0, &mut bar);
        assert_relative_eq!(bar.data[0], -1.0 / 16.0, epsilon = 1e-12);
    }
}
