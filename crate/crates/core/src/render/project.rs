//! Surfel-to-screen projection via the local affine approximation of the
//! perspective transform.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::geometry::{Camera, Surfel};
use crate::scalar::Real;

use super::RenderConfig;

/// A surfel projected into one camera.
#[derive(Debug, Clone)]
pub struct ProjectedSplat<T: Real> {
    /// Screen-space mean (pixels).
    pub mean2d: Vector2<T>,
    /// Screen-space covariance with the dilation floor applied (px^2).
    pub cov2d: Matrix2<T>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<T>,
    /// Camera-space depth of the center.
    pub view_depth: T,
    /// Camera-frame surfel center.
    pub t_cam: Vector3<T>,
    /// Camera-frame unit surfel normal, flipped toward the camera.
    pub normal_cam: Vector3<T>,
    /// +-1: sign applied to the raw normal to face the camera.
    pub flip: T,
    /// Conservative screen radius covering every fragment above alpha_min.
    pub radius: T,
    /// Index into the source surfel list.
    pub source: usize,
}

/// Local affine Jacobian of the pinhole projection at camera-space point `t`.
pub fn projection_jacobian<T: Real>(camera: &Camera<T>, t: &Vector3<T>) -> Matrix2x3<T> {
    let z = t.z;
    let z2 = z * z;
    Matrix2x3::new(
        camera.fx / z,
        T::zero(),
        -camera.fx * t.x / z2,
        T::zero(),
        camera.fy / z,
        -camera.fy * t.y / z2,
    )
}

/// Project one surfel; `None` when it is behind the near plane or its
/// footprint cannot touch the image.
pub fn project_surfel<T: Real>(
    surfel: &Surfel<T>,
    camera: &Camera<T>,
    config: &RenderConfig<T>,
    source: usize,
) -> Option<ProjectedSplat<T>> {
    let t = camera.to_camera(&surfel.center);
    if t.z <= camera.near || t.z >= camera.far {
        return None;
    }
    let mean2d = camera.project(&t);
    let jac = projection_jacobian(camera, &t);
    let m = camera.rotation * surfel.covariance() * camera.rotation.transpose();
    let mut cov2d: Matrix2<T> = jac * m * jac.transpose();
    cov2d[(0, 0)] += config.eps_px;
    cov2d[(1, 1)] += config.eps_px;
    // Symmetrize against rounding.
    let half = T::c(0.5);
    let off = (cov2d[(0, 1)] + cov2d[(1, 0)]) * half;
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;

    // Largest eigenvalue of a symmetric 2x2.
    let tr = cov2d[(0, 0)] + cov2d[(1, 1)];
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - off * off;
    let disc = (tr * tr * T::c(0.25) - det).max(T::zero()).sqrt();
    let lambda_max = tr * half + disc;
    // alpha >= 1/255 requires q <= 2 ln 255; 3.5 sigma covers that.
    let radius = T::c(3.5) * lambda_max.sqrt();

    let w = T::c(camera.width as f64);
    let h = T::c(camera.height as f64);
    if mean2d.x < -radius || mean2d.x > w + radius || mean2d.y < -radius || mean2d.y > h + radius {
        return None;
    }

    let conic = cov2d.try_inverse()?;

    let n_raw = camera.rotation * surfel.normal();
    // Face the camera: the plane normal should point against the viewing ray.
    let flip = if n_raw.dot(&t) > T::zero() {
        -T::one()
    } else {
        T::one()
    };
    let normal_cam = n_raw * flip;

    Some(ProjectedSplat {
        mean2d,
        cov2d,
        conic,
        view_depth: t.z,
        t_cam: t,
        normal_cam,
        flip,
        radius,
        source,
    })
}

/// Gaussian footprint weight at a pixel, before the opacity factor.
pub fn splat_gauss<T: Real>(splat: &ProjectedSplat<T>, pixel: &Vector2<T>) -> T {
    let d = pixel - splat.mean2d;
    let q = (splat.conic * d).dot(&d);
    (-q * T::c(0.5)).exp()
}

/// Fragment alpha at a pixel: opacity times the Gaussian footprint, clamped.
pub fn splat_alpha<T: Real>(
    splat: &ProjectedSplat<T>,
    opacity: T,
    pixel: &Vector2<T>,
    config: &RenderConfig<T>,
) -> T {
    (opacity * splat_gauss(splat, pixel)).min(config.alpha_clamp)
}

/// Depth of the intersection between the pixel ray and the surfel plane,
/// falling back to the center depth for grazing rays.
pub fn pixel_depth<T: Real>(splat: &ProjectedSplat<T>, camera: &Camera<T>, pixel: &Vector2<T>) -> T {
    let ray = camera.pixel_ray(pixel.x, pixel.y);
    let denom = splat.normal_cam.dot(&ray);
    if (denom / ray.norm()).abs() < T::c(1e-4) {
        return splat.view_depth;
    }
    splat.normal_cam.dot(&splat.t_cam) / denom
}

/// Adjoint of `pixel_depth` with respect to the camera-frame center and the
/// (flipped) camera-frame normal.
pub fn pixel_depth_backward<T: Real>(
    splat: &ProjectedSplat<T>,
    camera: &Camera<T>,
    pixel: &Vector2<T>,
    upstream: T,
) -> (Vector3<T>, Vector3<T>) {
    let ray = camera.pixel_ray(pixel.x, pixel.y);
    let denom = splat.normal_cam.dot(&ray);
    if (denom / ray.norm()).abs() < T::c(1e-4) {
        // Fallback branch: depth = t.z.
        return (Vector3::new(T::zero(), T::zero(), upstream), Vector3::zeros());
    }
    let p = splat.normal_cam.dot(&splat.t_cam);
    let t_bar = splat.normal_cam * (upstream / denom);
    let n_bar = (splat.t_cam / denom - ray * (p / (denom * denom))) * upstream;
    (t_bar, n_bar)
}

/// Full 3x3 upper-left block chain: maps an adjoint of `cov2d` back to the
/// world covariance, and an adjoint of the Jacobian back to `t`.
pub fn cov2d_backward<T: Real>(
    camera: &Camera<T>,
    t: &Vector3<T>,
    world_cov: &Matrix3<T>,
    cov2d_bar: &Matrix2<T>,
) -> (Matrix3<T>, Vector3<T>) {
    let half = T::c(0.5);
    let g = (cov2d_bar + cov2d_bar.transpose()) * half;
    let jac = projection_jacobian(camera, t);
    let m = camera.rotation * world_cov * camera.rotation.transpose();
    // cov2d = J M J^T  =>  M_bar = J^T G J, J_bar = 2 G J M.
    let m_bar = jac.transpose() * g * jac;
    let sigma_bar = camera.rotation.transpose() * m_bar * camera.rotation;
    let j_bar = g * jac * m * T::c(2.0);

    let z = t.z;
    let z2 = z * z;
    let z3 = z2 * z;
    let two = T::c(2.0);
    let mut t_bar = Vector3::zeros();
    t_bar.x = j_bar[(0, 2)] * (-camera.fx / z2);
    t_bar.y = j_bar[(1, 2)] * (-camera.fy / z2);
    t_bar.z = j_bar[(0, 0)] * (-camera.fx / z2)
        + j_bar[(0, 2)] * (two * camera.fx * t.x / z3)
        + j_bar[(1, 1)] * (-camera.fy / z2)
        + j_bar[(1, 2)] * (two * camera.fy * t.y / z3);
    (sigma_bar, t_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Task;
    use crate::scalar::logit;
    use approx::assert_relative_eq;
    use nalgebra::Vector4;

    fn test_camera() -> Camera<f64> {
        Camera::look_at(
            Vector3::new(0.0, 0.0, -2.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
            0.9,
            64,
            64,
            0.05,
            100.0,
        )
    }

    fn facing_surfel(center: Vector3<f64>, s: f64) -> Surfel<f64> {
        Surfel {
            center,
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: nalgebra::Vector2::new(s.ln(), s.ln()),
            opacity_logit: logit(0.8),
            confidence_logit: logit(0.5),
            sh: vec![Vector3::zeros()],
            order: 0,
            task: Task::Common,
        }
    }

    #[test]
    fn on_axis_cov2d_matches_pinhole_closed_form() {
        let cam = test_camera();
        let config = RenderConfig::default();
        let s = 0.05;
        let surfel = facing_surfel(Vector3::zeros(), s);
        let splat = project_surfel(&surfel, &cam, &config, 0).unwrap();
        let z = 2.0;
        let expect = (cam.fx * s / z).powi(2) + config.eps_px;
        assert_relative_eq!(splat.cov2d[(0, 0)], expect, epsilon = 1e-9);
        assert_relative_eq!(splat.cov2d[(1, 1)], expect, epsilon = 1e-9);
        assert_relative_eq!(splat.cov2d[(0, 1)], 0.0, epsilon = 1e-9);
        assert_relative_eq!(splat.view_depth, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = test_camera();
        let config = RenderConfig::default();
        let surfel = facing_surfel(Vector3::new(0.0, 0.0, -5.0), 0.1);
        assert!(project_surfel(&surfel, &cam, &config, 0).is_none());
    }

    #[test]
    fn cov2d_always_positive_definite() {
        let cam = test_camera();
        let config = RenderConfig::default();
        // Edge-on surfel: the projected ellipse degenerates but the dilation
        // floor keeps it invertible.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut surfel = facing_surfel(Vector3::new(0.3, -0.2, 0.0), 0.08);
        surfel.rotation = Vector4::new(h, h, 0.0, 0.0);
        let splat = project_surfel(&surfel, &cam, &config, 0).unwrap();
        let det = splat.cov2d[(0, 0)] * splat.cov2d[(1, 1)] - splat.cov2d[(0, 1)].powi(2);
        assert!(det > 0.0);
        assert_relative_eq!(splat.cov2d[(0, 1)], splat.cov2d[(1, 0)], epsilon = 1e-12);
    }

    #[test]
    fn alpha_center_and_offset() {
        let cam = test_camera();
        let mut config = RenderConfig::default();
        config.eps_px = 0.0;
        let surfel = facing_surfel(Vector3::zeros(), 0.05);
        let splat = project_surfel(&surfel, &cam, &config, 0).unwrap();
        assert_relative_eq!(
            splat_alpha(&splat, 0.8, &splat.mean2d, &config),
            0.8,
            epsilon = 1e-12
        );
        assert_relative_eq!(splat_alpha(&splat, 0.0, &splat.mean2d, &config), 0.0);
        // Unit cov2d: offset (1, 0) gives exp(-0.5).
        let mut unit = splat.clone();
        unit.cov2d = Matrix2::identity();
        unit.conic = Matrix2::identity();
        let pix = unit.mean2d + Vector2::new(1.0, 0.0);
        assert_relative_eq!(
            splat_alpha(&unit, 1.0, &pix, &config),
            (-0.5f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn frontoparallel_depth_is_constant() {
        let cam = test_camera();
        let config = RenderConfig::default();
        let surfel = facing_surfel(Vector3::zeros(), 0.3);
        let splat = project_surfel(&surfel, &cam, &config, 0).unwrap();
        for &(du, dv) in &[(0.0, 0.0), (5.0, -3.0), (-8.0, 2.0)] {
            let pix = splat.mean2d + Vector2::new(du, dv);
            assert_relative_eq!(pixel_depth(&splat, &cam, &pix), 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn tilted_depth_matches_ray_plane_oracle() {
        let cam = test_camera();
        let config = RenderConfig::default();
        // 45 degrees about x.
        let a = (std::f64::consts::FRAC_PI_8).cos();
        let b = (std::f64::consts::FRAC_PI_8).sin();
        let mut surfel = facing_surfel(Vector3::new(0.1, 0.05, 0.0), 0.3);
        surfel.rotation = Vector4::new(a, b, 0.0, 0.0);
        let splat = project_surfel(&surfel, &cam, &config, 0).unwrap();
        let pix = splat.mean2d + Vector2::new(4.0, -6.0);
        let d = pixel_depth(&splat, &cam, &pix);
        // Independent ray-plane solve in the camera frame.
        let ray = cam.pixel_ray(pix.x, pix.y);
        let n = splat.normal_cam;
        let s = n.dot(&splat.t_cam) / n.dot(&ray);
        let hit = ray * s;
        assert_relative_eq!((hit - ray * d).norm(), 0.0, epsilon = 1e-9);
        assert!((hit - splat.t_cam).dot(&n).abs() < 1e-9);
    }

    #[test]
    fn depth_backward_matches_finite_differences() {
        let cam = test_camera();
        let config = RenderConfig::default();
        let a = 0.95f64;
        let b = (1.0 - a * a).sqrt();
        let mut surfel = facing_surfel(Vector3::new(0.12, -0.07, 0.1), 0.3);
        surfel.rotation = Vector4::new(a, b * 0.6, b * 0.8, 0.0);
        let splat = project_surfel(&surfel, &cam, &config, 0).unwrap();
        let pix = splat.mean2d + Vector2::new(3.0, 2.0);
        let (t_bar, n_bar) = pixel_depth_backward(&splat, &cam, &pix, 1.0);
        let h = 1e-6;
        for i in 0..3 {
            let mut sp = splat.clone();
            let mut sm = splat.clone();
            sp.t_cam[i] += h;
            sm.t_cam[i] -= h;
            let fd = (pixel_depth(&sp, &cam, &pix) - pixel_depth(&sm, &cam, &pix)) / (2.0 * h);
            assert_relative_eq!(t_bar[i], fd, epsilon = 1e-6);
            let mut sp = splat.clone();
            let mut sm = splat.clone();
            sp.normal_cam[i] += h;
            sm.normal_cam[i] -= h;
            let fd = (pixel_depth(&sp, &cam, &pix) - pixel_depth(&sm, &cam, &pix)) / (2.0 * h);
            assert_relative_eq!(n_bar[i], fd, epsilon = 1e-5);
        }
    }
}
