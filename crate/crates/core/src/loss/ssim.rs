//! SSIM with an 11x11 Gaussian window (sigma 1.5), valid-window convention,
//! and its analytic gradient with respect to the first image.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::maps::VectorMap;
use crate::scalar::Real;

pub const WINDOW: usize = 11;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window<T: Real>() -> [T; WINDOW * WINDOW] {
    let sigma = 1.5f64;
    let mut w = [T::zero(); WINDOW * WINDOW];
    let mut total = 0.0;
    let mut raw = [0.0f64; WINDOW * WINDOW];
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let dx = x as f64 - 5.0;
            let dy = y as f64 - 5.0;
            let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            raw[y * WINDOW + x] = g;
            total += g;
        }
    }
    for i in 0..WINDOW * WINDOW {
        w[i] = T::c(raw[i] / total);
    }
    w
}

fn check_dims<T: Real>(a: &VectorMap<T>, b: &VectorMap<T>) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidArgument(format!(
            "ssim image shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {WINDOW}x{WINDOW} images, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Mean local SSIM over all fully-interior window positions, averaged over
/// the three channels.
pub fn ssim<T: Real>(a: &VectorMap<T>, b: &VectorMap<T>) -> Result<T> {
    ssim_impl(a, b, None)
}

/// [`ssim`] plus d(ssim)/d(a) accumulated into `a_bar` scaled by `upstream`.
pub fn ssim_backward<T: Real>(
    a: &VectorMap<T>,
    b: &VectorMap<T>,
    upstream: T,
    a_bar: &mut VectorMap<T>,
) -> Result<T> {
    ssim_impl(a, b, Some((upstream, a_bar)))
}

fn ssim_impl<T: Real>(
    a: &VectorMap<T>,
    b: &VectorMap<T>,
    mut backward: Option<(T, &mut VectorMap<T>)>,
) -> Result<T> {
    check_dims(a, b)?;
    let w = gaussian_window::<T>();
    let half = WINDOW / 2;
    let (width, height) = (a.width, a.height);
    let positions = (width - 2 * half) * (height - 2 * half);
    let c1 = T::c(C1);
    let c2 = T::c(C2);
    let norm = T::one() / T::c((positions * 3) as f64);

    let mut total = T::zero();
    for cy in half..height - half {
        for cx in half..width - half {
            for ch in 0..3 {
                let mut mu_a = T::zero();
                let mut mu_b = T::zero();
                let mut aa = T::zero();
                let mut bb = T::zero();
                let mut ab = T::zero();
                for wy in 0..WINDOW {
                    for wx in 0..WINDOW {
                        let wk = w[wy * WINDOW + wx];
                        let idx = (cy + wy - half) * width + (cx + wx - half);
                        let av = a.data[idx][ch];
                        let bv = b.data[idx][ch];
                        mu_a += wk * av;
                        mu_b += wk * bv;
                        aa += wk * av * av;
                        bb += wk * bv * bv;
                        ab += wk * av * bv;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let a1 = T::c(2.0) * mu_a * mu_b + c1;
                let a2 = T::c(2.0) * cov + c2;
                let b1 = mu_a * mu_a + mu_b * mu_b + c1;
                let b2 = var_a + var_b + c2;
                let s = a1 * a2 / (b1 * b2);
                total += s;

                if let Some((upstream, ref mut a_bar)) = backward {
                    // dS/dmu_a, dS/dvar_a, dS/dcov.
                    let ds_dmu = (T::c(2.0) * mu_b * a2 - T::c(2.0) * mu_a * s * b2) / (b1 * b2);
                    let ds_dvar = -s / b2;
                    let ds_dcov = T::c(2.0) * a1 / (b1 * b2);
                    let scale = upstream * norm;
                    for wy in 0..WINDOW {
                        for wx in 0..WINDOW {
                            let wk = w[wy * WINDOW + wx];
                            let idx = (cy + wy - half) * width + (cx + wx - half);
                            let av = a.data[idx][ch];
                            let bv = b.data[idx][ch];
                            let g = ds_dmu * wk
                                + ds_dvar * T::c(2.0) * wk * (av - mu_a)
                                + ds_dcov * wk * (bv - mu_b);
                            a_bar.data[idx][ch] += g * scale;
                        }
                    }
                }
            }
        }
    }
    Ok(total * norm)
}

/// Mean absolute error over pixels and channels.
pub fn l1<T: Real>(a: &VectorMap<T>, b: &VectorMap<T>) -> Result<T> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidArgument("l1 image shapes differ".into()));
    }
    let mut sum = T::zero();
    for i in 0..a.data.len() {
        let d = a.data[i] - b.data[i];
        sum += d.x.abs() + d.y.abs() + d.z.abs();
    }
    Ok(sum / T::c((a.data.len() * 3) as f64))
}

/// Appendix radiance loss: (1 − λ_ssim)·L1 + λ_ssim·(1 − SSIM).
pub fn l_rad<T: Real>(rendered: &VectorMap<T>, gt: &VectorMap<T>, lambda_ssim: T) -> Result<T> {
    Ok((T::one() - lambda_ssim) * l1(rendered, gt)? + lambda_ssim * (T::one() - ssim(rendered, gt)?))
}

/// Backward of [`l_rad`] into a color-map adjoint.
pub fn l_rad_backward<T: Real>(
    rendered: &VectorMap<T>,
    gt: &VectorMap<T>,
    lambda_ssim: T,
    upstream: T,
    color_bar: &mut VectorMap<T>,
) -> Result<T> {
    let l1_value = l1(rendered, gt)?;
    let inv = upstream * (T::one() - lambda_ssim) / T::c((rendered.data.len() * 3) as f64);
    for i in 0..rendered.data.len() {
        let d = rendered.data[i] - gt.data[i];
        color_bar.data[i] += Vector3::new(d.x.signum(), d.y.signum(), d.z.signum()) * inv;
    }
    let ssim_value = ssim_backward(rendered, gt, -upstream * lambda_ssim, color_bar)?;
    Ok((T::one() - lambda_ssim) * l1_value + lambda_ssim * (T::one() - ssim_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Buffer2;
    use crate::scene::fd::grads_agree;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn image(width: usize, height: usize, f: impl Fn(usize, usize) -> Vector3<f64>) -> VectorMap<f64> {
        Buffer2 {
            width,
            height,
            data: (0..width * height).map(|i| f(i % width, i / width)).collect(),
        }
    }

    fn random_image(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> VectorMap<f64> {
        Buffer2 {
            width: n,
            height: n,
            data: (0..n * n)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn identity_is_one() {
        let mut rng = crate::scene::testgen::rng(1);
        let a = random_image(&mut rng, 16);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(l_rad(&a, &a, 0.2).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_images_hit_the_stabilizer_floor() {
        let a = image(12, 12, |_, _| Vector3::zeros());
        let b = image(12, 12, |_, _| Vector3::from_element(1.0));
        // Zero variances make the structure factor (2σ_ab+C2)/(σ_a²+σ_b²+C2)
        // exactly 1, leaving the luminance floor C1/(μ_a²+μ_b²+C1).
        let expect = C1 / (1.0 + C1);
        assert_relative_eq!(ssim(&a, &b).unwrap(), expect, epsilon = 1e-9);
        assert!(ssim(&a, &b).unwrap() < 1e-3);
    }

    #[test]
    fn symmetric() {
        let mut rng = crate::scene::testgen::rng(2);
        let a = random_image(&mut rng, 14);
        let b = random_image(&mut rng, 14);
        assert_relative_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn too_small_image_is_rejected() {
        let a = image(8, 8, |_, _| Vector3::zeros());
        assert!(ssim(&a, &a).is_err());
        let b = image(12, 12, |_, _| Vector3::zeros());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn uniform_offset_l1_term() {
        let mut rng = crate::scene::testgen::rng(3);
        let gt = Buffer2 {
            width: 14,
            height: 14,
            data: (0..14 * 14)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(0.1..0.8),
                        rng.gen_range(0.1..0.8),
                        rng.gen_range(0.1..0.8),
                    )
                })
                .collect(),
        };
        let mut rendered = gt.clone();
        rendered.data.iter_mut().for_each(|p| *p += Vector3::from_element(0.1));
        let l = l_rad(&rendered, &gt, 0.2).unwrap();
        let ssim_term = 0.2 * (1.0 - ssim(&rendered, &gt).unwrap());
        assert_relative_eq!(l, 0.08 + ssim_term, epsilon = 1e-9);
    }

    #[test]
    fn l_rad_gradient_matches_finite_differences() {
        let mut rng = crate::scene::testgen::rng(4);
        let a = random_image(&mut rng, 12);
        let b = random_image(&mut rng, 12);
        let mut bar = Buffer2::filled(12, 12, Vector3::zeros());
        l_rad_backward(&a, &b, 0.2, 1.0, &mut bar).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for i in (0..a.data.len()).step_by(11) {
            for ch in 0..3 {
                let mut ap = a.clone();
                ap.data[i][ch] += h;
                let mut am = a.clone();
                am.data[i][ch] -= h;
                let fd =
                    (l_rad(&ap, &b, 0.2).unwrap() - l_rad(&am, &b, 0.2).unwrap()) / (2.0 * h);
                assert!(
                    grads_agree(bar.data[i][ch], fd, 1e-3, 1e-6),
                    "pixel {i} ch {ch}: {} vs {}",
                    bar.data[i][ch],
                    fd
                );
                checked += 1;
            }
        }
        assert!(checked > 30);
    }
}
