//! Forward rasterization: per-pixel front-to-back compositing with recorded
//! fragment lists for the reverse pass.

use nalgebra::{Vector2, Vector3};

use crate::geometry::{sh, Camera, RenderedMaps, Surfel};
use crate::scalar::{sigmoid, Real};

use super::project::{pixel_depth, project_surfel, splat_gauss, ProjectedSplat};
use super::{RenderConfig, RenderMode};

/// One kept fragment: alpha above the cutoff at one pixel.
#[derive(Debug, Clone, Copy)]
pub struct Frag<T> {
    pub splat: u32,
    pub alpha: T,
    /// Gaussian footprint weight before the opacity factor and clamp.
    pub gauss: T,
    /// Ray-plane depth payload at this pixel.
    pub depth: T,
}

/// Fragment lists and per-splat contribution statistics for one pass.
#[derive(Debug, Clone)]
pub struct PassRecord<T: Real> {
    /// Per-pixel fragments, front-to-back.
    pub frags: Vec<Vec<Frag<T>>>,
    /// Transmittance left after all fragments, per pixel.
    pub final_t: Vec<T>,
    /// Per-splat sum of alpha * T over the pixels it touched.
    pub contrib_sum: Vec<T>,
    /// Per-splat count of pixels with a kept fragment.
    pub pixel_count: Vec<u32>,
}

impl<T: Real> PassRecord<T> {
    fn new(pixels: usize, splats: usize) -> Self {
        PassRecord {
            frags: vec![Vec::new(); pixels],
            final_t: vec![T::one(); pixels],
            contrib_sum: vec![T::zero(); splats],
            pixel_count: vec![0; splats],
        }
    }

    /// Per-view contribution w = (1/|U|) sum of alpha*T; zero when the splat
    /// produced no fragment.
    pub fn contribution(&self, splat: usize) -> T {
        if self.pixel_count[splat] == 0 {
            T::zero()
        } else {
            self.contrib_sum[splat] / T::c(self.pixel_count[splat] as f64)
        }
    }
}

/// Everything the backward pass needs from a forward render.
#[derive(Debug, Clone)]
pub struct ForwardRecord<T: Real> {
    pub splats: Vec<ProjectedSplat<T>>,
    /// Per-splat view-dependent rgb (clamped SH color).
    pub colors: Vec<Vector3<T>>,
    /// Per-splat world-frame unit view direction used for the SH lookup.
    pub dirs: Vec<Vector3<T>>,
    pub opacities: Vec<T>,
    pub confidences: Vec<T>,
    pub color_pass: PassRecord<T>,
    pub normal_pass: PassRecord<T>,
    pub mode: RenderMode,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> ForwardRecord<T> {
    /// Map a surfel index to its splat index, if it was not culled.
    pub fn splat_of(&self, surfel: usize) -> Option<usize> {
        self.splats.iter().position(|s| s.source == surfel)
    }
}

fn pixel_center<T: Real>(x: usize, y: usize) -> Vector2<T> {
    Vector2::new(T::c(x as f64 + 0.5), T::c(y as f64 + 0.5))
}

/// Render every map for one view. Fragments are depth-sorted per pixel; in
/// `Separate` mode the color/depth maps composite only over surfels in the
/// color pass and the normal map only over surfels in the normal pass.
pub fn render_maps<T: Real>(
    surfels: &[Surfel<T>],
    camera: &Camera<T>,
    mode: RenderMode,
    config: &RenderConfig<T>,
) -> (RenderedMaps<T>, ForwardRecord<T>) {
    let (w, h) = (camera.width, camera.height);
    let cam_pos = camera.position();

    // Project and sort globally by center depth; ties broken on the center
    // coordinates so rendering is invariant to the input permutation.
    let mut splats: Vec<ProjectedSplat<T>> = surfels
        .iter()
        .enumerate()
        .filter_map(|(i, s)| project_surfel(s, camera, config, i))
        .collect();
    splats.sort_by(|a, b| {
        let ka = (a.view_depth, a.t_cam.x, a.t_cam.y);
        let kb = (b.view_depth, b.t_cam.x, b.t_cam.y);
        ka.partial_cmp(&kb).expect("finite projected depths")
    });

    let n = splats.len();
    let mut colors = Vec::with_capacity(n);
    let mut dirs = Vec::with_capacity(n);
    let mut opacities = Vec::with_capacity(n);
    let mut confidences = Vec::with_capacity(n);
    for splat in &splats {
        let s = &surfels[splat.source];
        let dir = (s.center - cam_pos).normalize();
        colors.push(sh::sh_eval(&s.sh, s.order, &dir).expect("surfel sh consistent"));
        dirs.push(dir);
        opacities.push(s.opacity());
        confidences.push(s.confidence());
    }

    let mut color_pass = PassRecord::new(w * h, n);
    let mut normal_pass = PassRecord::new(w * h, n);

    for (si, splat) in splats.iter().enumerate() {
        let task = surfels[splat.source].task;
        let (in_color, in_normal) = match mode {
            RenderMode::Unified => (true, true),
            RenderMode::Separate => (task.in_color_pass(), task.in_normal_pass()),
        };
        if !in_color && !in_normal {
            continue;
        }
        let r = splat.radius;
        let x0 = (splat.mean2d.x - r).floor().f64().max(0.0) as usize;
        let x1 = (((splat.mean2d.x + r).ceil().f64()).min(w as f64)).max(0.0) as usize;
        let y0 = (splat.mean2d.y - r).floor().f64().max(0.0) as usize;
        let y1 = (((splat.mean2d.y + r).ceil().f64()).min(h as f64)).max(0.0) as usize;
        let opacity = opacities[si];
        for y in y0..y1 {
            for x in x0..x1 {
                let pix = pixel_center::<T>(x, y);
                let gauss = splat_gauss(splat, &pix);
                let alpha = (opacity * gauss).min(config.alpha_clamp);
                if alpha < config.alpha_min {
                    continue;
                }
                let depth = pixel_depth(splat, camera, &pix);
                let frag = Frag {
                    splat: si as u32,
                    alpha,
                    gauss,
                    depth,
                };
                let idx = y * w + x;
                if in_color {
                    color_pass.frags[idx].push(frag);
                }
                if in_normal {
                    normal_pass.frags[idx].push(frag);
                }
            }
        }
    }

    let mut maps = RenderedMaps::new(w, h);

    // Color pass: color, confidence, depth, alpha mask.
    for idx in 0..w * h {
        let mut trans = T::one();
        let mut color = Vector3::zeros();
        let mut conf = T::zero();
        let mut dsum = T::zero();
        for frag in &color_pass.frags[idx] {
            let si = frag.splat as usize;
            let weight = frag.alpha * trans;
            color += colors[si] * weight;
            conf += confidences[si] * weight;
            dsum += frag.depth * weight;
            color_pass.contrib_sum[si] += weight;
            color_pass.pixel_count[si] += 1;
            trans *= T::one() - frag.alpha;
        }
        color_pass.final_t[idx] = trans;
        let coverage = T::one() - trans;
        maps.color.data[idx] = color;
        maps.confidence.data[idx] = conf;
        maps.alpha.data[idx] = coverage;
        maps.depth.data[idx] = if coverage >= config.coverage_eps {
            dsum / coverage
        } else {
            T::zero()
        };
    }

    // Normal pass.
    let normals_cam: Vec<Vector3<T>> = splats.iter().map(|s| s.normal_cam).collect();
    for idx in 0..w * h {
        let mut trans = T::one();
        let mut nsum = Vector3::zeros();
        for frag in &normal_pass.frags[idx] {
            let si = frag.splat as usize;
            let weight = frag.alpha * trans;
            nsum += normals_cam[si] * weight;
            normal_pass.contrib_sum[si] += weight;
            normal_pass.pixel_count[si] += 1;
            trans *= T::one() - frag.alpha;
        }
        normal_pass.final_t[idx] = trans;
        let coverage = T::one() - trans;
        maps.normal.data[idx] = if coverage >= config.coverage_eps && nsum.norm() > T::c(1e-12) {
            nsum.normalize()
        } else {
            Vector3::zeros()
        };
    }

    let record = ForwardRecord {
        splats,
        colors,
        dirs,
        opacities,
        confidences,
        color_pass,
        normal_pass,
        mode,
        width: w,
        height: h,
    };
    (maps, record)
}

/// Sigmoid-activated confidence of a surfel list, exposed for tests.
pub fn activated_confidences<T: Real>(surfels: &[Surfel<T>]) -> Vec<T> {
    surfels.iter().map(|s| sigmoid(s.confidence_logit)).collect()
}
