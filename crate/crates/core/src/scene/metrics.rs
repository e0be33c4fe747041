//! Evaluation metrics: PSNR, Chamfer distance and angular normal error.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::maps::{ScalarMap, VectorMap};
use crate::geometry::{Surfel, Task};
use crate::scalar::Real;

/// Peak signal-to-noise ratio in dB over all channels; infinite for
/// identical images.
pub fn psnr<T: Real>(a: &VectorMap<T>, b: &VectorMap<T>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::InvalidArgument(format!(
            "psnr shape mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut mse = 0.0;
    for (pa, pb) in a.data.iter().zip(&b.data) {
        let d = pa - pb;
        mse += (d.x * d.x + d.y * d.y + d.z * d.z).f64();
    }
    mse /= (a.data.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean angle in degrees between the two normal maps, over pixels where
/// both maps are nonzero and the mask passes.
pub fn mean_angular_error_deg<T: Real>(
    a: &VectorMap<T>,
    b: &VectorMap<T>,
    mask: &ScalarMap<T>,
) -> Result<f64> {
    if !a.same_shape(b) || !a.same_shape(mask) {
        return Err(Error::InvalidArgument("angular error shape mismatch".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..a.data.len() {
        if mask.data[i] < T::c(0.5) {
            continue;
        }
        let na = a.data[i];
        let nb = b.data[i];
        let (la, lb) = (na.norm(), nb.norm());
        if la == T::zero() || lb == T::zero() {
            continue;
        }
        let cos = (na.dot(&nb) / (la * lb)).f64().clamp(-1.0, 1.0);
        sum += cos.acos().to_degrees();
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("angular error has no valid pixels".into()));
    }
    Ok(sum / count as f64)
}

/// Symmetric Chamfer distance, 0.5 * (mean_a min_b |a-b| + mean_b min_a |b-a|),
/// by brute-force nearest neighbours.
pub fn chamfer<T: Real>(a: &[Vector3<T>], b: &[Vector3<T>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("chamfer needs nonempty point sets".into()));
    }
    let one_sided = |from: &[Vector3<T>], to: &[Vector3<T>]| -> f64 {
        let mut sum = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                best = best.min((p - q).norm_squared().f64());
            }
            sum += best.sqrt();
        }
        sum / from.len() as f64
    };
    Ok(0.5 * (one_sided(a, b) + one_sided(b, a)))
}

/// Geometry-carrying surfel centers: the normal-pass set (Common and
/// NormalOnly) above an opacity floor.
pub fn extract_points<T: Real>(surfels: &[Surfel<T>], opacity_floor: T) -> Vec<Vector3<T>> {
    surfels
        .iter()
        .filter(|s| s.task.in_normal_pass() && s.opacity() >= opacity_floor)
        .map(|s| s.center)
        .collect()
}

/// Deterministic point samples over each geometry-carrying surfel's
/// elliptical disk (center plus `rings` concentric rings of 8), dense
/// enough for coverage-limited Chamfer evaluation.
pub fn extract_disk_points<T: Real>(
    surfels: &[Surfel<T>],
    opacity_floor: T,
    rings: usize,
) -> Vec<Vector3<T>> {
    let mut out = Vec::new();
    for s in surfels {
        if !s.task.in_normal_pass() || s.opacity() < opacity_floor {
            continue;
        }
        out.push(s.center);
        let r = s.rotation_matrix();
        let (tu, tv) = (r.column(0).into_owned(), r.column(1).into_owned());
        let scale = s.scale();
        for ring in 1..=rings {
            let rad = T::c(ring as f64 / rings as f64);
            for k in 0..8 {
                let phi = std::f64::consts::TAU * k as f64 / 8.0;
                let (sin, cos) = (T::c(phi.sin()), T::c(phi.cos()));
                out.push(s.center + tu * (rad * cos * scale.x) + tv * (rad * sin * scale.y));
            }
        }
    }
    out
}

/// Scalar parameter count of the splat model, split by pass membership.
pub fn model_size<T: Real>(surfels: &[Surfel<T>]) -> (usize, usize, usize) {
    let mut total = 0;
    let mut color = 0;
    let mut normal = 0;
    for s in surfels {
        total += s.scalar_count();
        if s.task.in_color_pass() {
            color += 1;
        }
        if s.task == Task::NormalOnly {
            normal += 1;
        }
    }
    (total, color, normal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Buffer2;
    use approx::assert_relative_eq;

    #[test]
    fn psnr_known_values() {
        let a: VectorMap<f64> = Buffer2::filled(4, 4, Vector3::new(0.5, 0.5, 0.5));
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        // Uniform offset of 0.1 on every channel: MSE = 0.01, PSNR = 20 dB.
        let b = Buffer2::filled(4, 4, Vector3::new(0.6, 0.6, 0.6));
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
        let c = Buffer2::filled(3, 4, Vector3::zeros());
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn angular_error_known_angles() {
        let mut a: VectorMap<f64> = Buffer2::filled(2, 1, Vector3::new(0.0, 0.0, 1.0));
        let mut b = a.clone();
        let mask = Buffer2::filled(2, 1, 1.0);
        // 90 degrees and 0 degrees -> mean 45.
        b.data[0] = Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(mean_angular_error_deg(&a, &b, &mask).unwrap(), 45.0, epsilon = 1e-9);
        // Zero vectors drop out.
        a.data[1] = Vector3::zeros();
        assert_relative_eq!(mean_angular_error_deg(&a, &b, &mask).unwrap(), 90.0, epsilon = 1e-9);
        a.data[0] = Vector3::zeros();
        assert!(mean_angular_error_deg(&a, &b, &mask).is_err());
    }

    #[test]
    fn chamfer_hand_case() {
        let a = vec![Vector3::new(0.0, 0.0, 0.0f64), Vector3::new(1.0, 0.0, 0.0)];
        let b = vec![Vector3::new(0.0, 0.5, 0.0)];
        // a->b: (0.5 + sqrt(1.25))/2, b->a: 0.5.
        let expected = 0.5 * ((0.5 + 1.25f64.sqrt()) / 2.0 + 0.5);
        assert_relative_eq!(chamfer(&a, &b).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn extract_points_filters_task_and_opacity() {
        let mut rng = crate::scene::testgen::rng(5);
        let mut s: Vec<Surfel<f64>> = crate::scene::testgen::random_surfels(&mut rng, 4, 1.0);
        for (i, s) in s.iter_mut().enumerate() {
            s.center = Vector3::new(i as f64, 0.0, 0.0);
            s.opacity_logit = 2.0;
            s.task = Task::Common;
        }
        s[1].task = Task::ColorOnly;
        s[2].task = Task::NormalOnly;
        s[3].opacity_logit = -8.0; // below any reasonable floor
        let pts = extract_points(&s, 0.005);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].x, 0.0);
        assert_eq!(pts[1].x, 2.0);
    }

    #[test]
    fn disk_points_stay_in_the_surfel_plane() {
        let mut rng = crate::scene::testgen::rng(6);
        let s: Vec<Surfel<f64>> = crate::scene::testgen::random_surfels(&mut rng, 1, 1.0);
        let pts = extract_disk_points(&s, 0.0, 2);
        assert_eq!(pts.len(), 1 + 2 * 8);
        let n = s[0].normal();
        let max_scale = s[0].scale().max();
        for p in &pts {
            let d = p - s[0].center;
            assert!(d.dot(&n).abs() < 1e-12, "off-plane sample");
            assert!(d.norm() <= max_scale + 1e-12);
        }
    }
}
