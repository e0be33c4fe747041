//! Shared brute-force reference compositor for the renderer test suites.
//!
//! Evaluates every surfel at every pixel (no bounding boxes, no shared
//! per-pixel state with the production path) and composites with the
//! textbook front-to-back recurrence.

use nalgebra::{Vector2, Vector3};
use surfelcore::geometry::{sh, Camera, RenderedMaps, Surfel};
use surfelcore::render::{pixel_depth, project_surfel, RenderConfig, RenderMode};
use surfelcore::scalar::Real;

/// Reference rendering of all maps for one view.
pub fn reference_render<T: Real>(
    surfels: &[Surfel<T>],
    camera: &Camera<T>,
    mode: RenderMode,
    config: &RenderConfig<T>,
) -> RenderedMaps<T> {
    let cam_pos = camera.position();
    let mut splats: Vec<_> = surfels
        .iter()
        .enumerate()
        .filter_map(|(i, s)| project_surfel(s, camera, config, i))
        .collect();
    splats.sort_by(|a, b| {
        (a.view_depth, a.t_cam.x, a.t_cam.y)
            .partial_cmp(&(b.view_depth, b.t_cam.x, b.t_cam.y))
            .unwrap()
    });

    let mut maps = RenderedMaps::new(camera.width, camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let idx = y * camera.width + x;
            let pix = Vector2::new(T::c(x as f64 + 0.5), T::c(y as f64 + 0.5));

            let mut ct = T::one();
            let mut color = Vector3::zeros();
            let mut conf = T::zero();
            let mut dsum = T::zero();
            let mut nt = T::one();
            let mut nsum = Vector3::zeros();
            for splat in &splats {
                let s = &surfels[splat.source];
                let (in_color, in_normal) = match mode {
                    RenderMode::Unified => (true, true),
                    RenderMode::Separate => (s.task.in_color_pass(), s.task.in_normal_pass()),
                };
                // Quadratic form straight from the 2x2 covariance inverse.
                let d = pix - splat.mean2d;
                let c = &splat.cov2d;
                let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
                let q = (c[(1, 1)] * d.x * d.x - (c[(0, 1)] + c[(1, 0)]) * d.x * d.y
                    + c[(0, 0)] * d.y * d.y)
                    / det;
                let alpha = (s.opacity() * (-q / T::c(2.0)).exp()).min(config.alpha_clamp);
                if alpha < config.alpha_min {
                    continue;
                }
                if in_color {
                    let dir = (s.center - cam_pos).normalize();
                    let rgb = sh::sh_eval(&s.sh, s.order, &dir).unwrap();
                    let weight = alpha * ct;
                    color += rgb * weight;
                    conf += s.confidence() * weight;
                    dsum += pixel_depth(splat, camera, &pix) * weight;
                    ct *= T::one() - alpha;
                }
                if in_normal {
                    nsum += splat.normal_cam * (alpha * nt);
                    nt *= T::one() - alpha;
                }
            }
            let coverage = T::one() - ct;
            maps.color.data[idx] = color;
            maps.confidence.data[idx] = conf;
            maps.alpha.data[idx] = coverage;
            maps.depth.data[idx] = if coverage >= config.coverage_eps {
                dsum / coverage
            } else {
                T::zero()
            };
            let ncov = T::one() - nt;
            maps.normal.data[idx] = if ncov >= config.coverage_eps && nsum.norm() > T::c(1e-12) {
                nsum.normalize()
            } else {
                Vector3::zeros()
            };
        }
    }
    maps
}

/// Largest absolute difference over every channel of every map.
pub fn max_map_difference<T: Real>(a: &RenderedMaps<T>, b: &RenderedMaps<T>) -> T {
    let mut worst = T::zero();
    for i in 0..a.color.data.len() {
        worst = worst.max((a.color.data[i] - b.color.data[i]).abs().max());
        worst = worst.max((a.normal.data[i] - b.normal.data[i]).abs().max());
        worst = worst.max((a.depth.data[i] - b.depth.data[i]).abs());
        worst = worst.max((a.confidence.data[i] - b.confidence.data[i]).abs());
        worst = worst.max((a.alpha.data[i] - b.alpha.data[i]).abs());
    }
    worst
}
