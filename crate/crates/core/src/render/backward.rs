//! Reverse pass of the rasterizer: per-map adjoint images in, per-attribute
//! surfel gradients out.

use nalgebra::{Matrix2, Vector2, Vector3, Vector4};

use crate::geometry::maps::{ScalarMap, VectorMap};
use crate::geometry::surfel::{covariance_backward, quat_to_matrix_backward};
use crate::geometry::{sh, Camera, Surfel};
use crate::scalar::Real;

use super::forward::{ForwardRecord, PassRecord};
use super::project::{cov2d_backward, pixel_depth_backward};
use super::RenderConfig;

/// Adjoint images for each rendered map; `None` means zero.
#[derive(Default)]
pub struct MapAdjoints<'a, T: Real> {
    pub color: Option<&'a VectorMap<T>>,
    pub depth: Option<&'a ScalarMap<T>>,
    pub normal: Option<&'a VectorMap<T>>,
    pub confidence: Option<&'a ScalarMap<T>>,
    pub alpha: Option<&'a ScalarMap<T>>,
}

/// Gradients with respect to every stored surfel parameter (raw
/// parameterization: quaternion components, log-scales, logits).
#[derive(Debug, Clone)]
pub struct SurfelGrads<T: Real> {
    pub center: Vec<Vector3<T>>,
    pub rotation: Vec<Vector4<T>>,
    pub log_scale: Vec<Vector2<T>>,
    pub opacity_logit: Vec<T>,
    pub confidence_logit: Vec<T>,
    pub sh: Vec<Vec<Vector3<T>>>,
    /// Accumulated screen-space (mean2d) gradient, for the ledger.
    pub screen: Vec<Vector2<T>>,
}

impl<T: Real> SurfelGrads<T> {
    pub fn zeros_like(surfels: &[Surfel<T>]) -> Self {
        SurfelGrads {
            center: vec![Vector3::zeros(); surfels.len()],
            rotation: vec![Vector4::zeros(); surfels.len()],
            log_scale: vec![Vector2::zeros(); surfels.len()],
            opacity_logit: vec![T::zero(); surfels.len()],
            confidence_logit: vec![T::zero(); surfels.len()],
            sh: surfels
                .iter()
                .map(|s| vec![Vector3::zeros(); s.sh.len()])
                .collect(),
            screen: vec![Vector2::zeros(); surfels.len()],
        }
    }

    pub fn accumulate(&mut self, other: &SurfelGrads<T>) {
        for i in 0..self.center.len() {
            self.center[i] += other.center[i];
            self.rotation[i] += other.rotation[i];
            self.log_scale[i] += other.log_scale[i];
            self.opacity_logit[i] += other.opacity_logit[i];
            self.confidence_logit[i] += other.confidence_logit[i];
            self.screen[i] += other.screen[i];
            for (a, b) in self.sh[i].iter_mut().zip(&other.sh[i]) {
                *a += *b;
            }
        }
    }

    /// Norm of the SH gradient restricted to one band's coefficients.
    pub fn sh_band_norm(&self, surfel: usize, band: usize) -> T {
        let range = sh::sh_band_range(band);
        let mut sum = T::zero();
        for g in self.sh[surfel][range.start.min(self.sh[surfel].len())
            ..range.end.min(self.sh[surfel].len())]
            .iter()
        {
            sum += g.norm_squared();
        }
        sum.sqrt()
    }
}

/// Per-splat accumulators filled by the pixel loops.
struct SplatAccum<T: Real> {
    mean2d: Vec<Vector2<T>>,
    cov2d: Vec<Matrix2<T>>,
    color: Vec<Vector3<T>>,
    conf: Vec<T>,
    opacity: Vec<T>,
    normal_cam: Vec<Vector3<T>>,
    t_cam: Vec<Vector3<T>>,
}

impl<T: Real> SplatAccum<T> {
    fn new(n: usize) -> Self {
        SplatAccum {
            mean2d: vec![Vector2::zeros(); n],
            cov2d: vec![Matrix2::zeros(); n],
            color: vec![Vector3::zeros(); n],
            conf: vec![T::zero(); n],
            opacity: vec![T::zero(); n],
            normal_cam: vec![Vector3::zeros(); n],
            t_cam: vec![Vector3::zeros(); n],
        }
    }
}

/// Reverse-mode pass over a recorded forward render.
pub fn backward<T: Real>(
    surfels: &[Surfel<T>],
    camera: &Camera<T>,
    record: &ForwardRecord<T>,
    adjoints: &MapAdjoints<'_, T>,
    config: &RenderConfig<T>,
) -> SurfelGrads<T> {
    let n = record.splats.len();
    let mut acc = SplatAccum::new(n);
    let (w, h) = (record.width, record.height);

    // Color pass carries color, confidence, depth and the alpha mask.
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let c_bar = adjoints.color.map_or(Vector3::zeros(), |m| m.data[idx]);
            let f_bar = adjoints.confidence.map_or(T::zero(), |m| m.data[idx]);
            let d_bar = adjoints.depth.map_or(T::zero(), |m| m.data[idx]);
            let o_bar_mask = adjoints.alpha.map_or(T::zero(), |m| m.data[idx]);
            if c_bar == Vector3::zeros()
                && f_bar == T::zero()
                && d_bar == T::zero()
                && o_bar_mask == T::zero()
            {
                continue;
            }
            color_pixel_backward(
                surfels, camera, record, config, &mut acc, x, y, &c_bar, f_bar, d_bar, o_bar_mask,
            );
        }
    }

    // Normal pass.
    if let Some(n_map) = adjoints.normal {
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                let n_bar = n_map.data[idx];
                if n_bar == Vector3::zeros() {
                    continue;
                }
                normal_pixel_backward(record, config, &mut acc, x, y, &n_bar);
            }
        }
    }

    // Chain per-splat accumulators to surfel parameters.
    let mut grads = SurfelGrads::zeros_like(surfels);
    let cam_pos = camera.position();
    for (si, splat) in record.splats.iter().enumerate() {
        let src = splat.source;
        let surfel = &surfels[src];
        let rot = surfel.rotation_matrix();
        let scale = surfel.scale();

        let (sigma_bar, mut t_bar) =
            cov2d_backward(camera, &splat.t_cam, &surfel.covariance(), &acc.cov2d[si]);
        let (mut r_bar, s_bar) = covariance_backward(&rot, &scale, &sigma_bar);

        // mean2d chain: u = fx tx/tz + cx, v = fy ty/tz + cy.
        let z = splat.t_cam.z;
        let m_bar = acc.mean2d[si];
        t_bar.x += m_bar.x * camera.fx / z;
        t_bar.y += m_bar.y * camera.fy / z;
        t_bar.z +=
            -(m_bar.x * camera.fx * splat.t_cam.x + m_bar.y * camera.fy * splat.t_cam.y) / (z * z);
        t_bar += acc.t_cam[si];

        // Normal payload chain: n_cam = flip * W * R * e3.
        let n_world_bar = camera.rotation.transpose() * acc.normal_cam[si] * splat.flip;
        r_bar.set_column(2, &(Vector3::from(r_bar.column(2)) + n_world_bar));

        grads.rotation[src] += quat_to_matrix_backward(&surfel.rotation, &r_bar);
        grads.log_scale[src] += Vector2::new(s_bar.x * scale.x, s_bar.y * scale.y);
        grads.center[src] += camera.rotation.transpose() * t_bar;

        // SH chain, including the view-direction dependence on the center.
        if acc.color[si] != Vector3::zeros() {
            let dir = record.dirs[si];
            let dir_grad = sh::sh_eval_backward(
                &surfel.sh,
                surfel.order,
                &dir,
                &acc.color[si],
                &mut grads.sh[src],
            );
            let r = (surfel.center - cam_pos).norm();
            grads.center[src] += (dir_grad - dir * dir.dot(&dir_grad)) / r;
        }

        let o = record.opacities[si];
        grads.opacity_logit[src] += acc.opacity[si] * o * (T::one() - o);
        let f = record.confidences[si];
        grads.confidence_logit[src] += acc.conf[si] * f * (T::one() - f);
        grads.screen[src] += acc.mean2d[si];
    }
    grads
}

#[allow(clippy::too_many_arguments)]
fn color_pixel_backward<T: Real>(
    surfels: &[Surfel<T>],
    camera: &Camera<T>,
    record: &ForwardRecord<T>,
    config: &RenderConfig<T>,
    acc: &mut SplatAccum<T>,
    x: usize,
    y: usize,
    c_bar: &Vector3<T>,
    f_bar: T,
    d_bar: T,
    o_bar_mask: T,
) {
    let idx = y * record.width + x;
    let pass = &record.color_pass;
    let frags = &pass.frags[idx];
    if frags.is_empty() {
        return;
    }
    let m = frags.len();
    let pix = Vector2::new(T::c(x as f64 + 0.5), T::c(y as f64 + 0.5));

    // Forward sweep: transmittances, weights and the raw depth sum.
    let mut trans = Vec::with_capacity(m);
    let mut t = T::one();
    let mut dsum = T::zero();
    for frag in frags {
        trans.push(t);
        dsum += frag.depth * frag.alpha * t;
        t *= T::one() - frag.alpha;
    }
    let final_t = t;
    let coverage = T::one() - final_t;

    // Depth map normalization: D = dsum / coverage where covered.
    let (sd_bar, o_bar_depth) = if coverage >= config.coverage_eps && d_bar != T::zero() {
        let sd = d_bar / coverage;
        (sd, -d_bar * dsum / (coverage * coverage))
    } else {
        (T::zero(), T::zero())
    };
    let o_bar_total = o_bar_mask + o_bar_depth;

    // Backward sweep with per-channel suffix sums (values after fragment k).
    let mut after_color = Vector3::zeros();
    let mut after_conf = T::zero();
    let mut after_depth = T::zero();
    for k in (0..m).rev() {
        let frag = &frags[k];
        let si = frag.splat as usize;
        let t_k = trans[k];
        let weight = frag.alpha * t_k;
        let one_m_a = T::one() - frag.alpha;

        let color_k = record.colors[si];
        let conf_k = record.confidences[si];

        acc.color[si] += c_bar * weight;
        acc.conf[si] += f_bar * weight;
        if sd_bar != T::zero() {
            let (t_cam_bar, n_bar) =
                pixel_depth_backward(&record.splats[si], camera, &pix, sd_bar * weight);
            acc.t_cam[si] += t_cam_bar;
            acc.normal_cam[si] += n_bar;
        }

        let mut alpha_bar = c_bar.dot(&(color_k * t_k - after_color / one_m_a))
            + f_bar * (conf_k * t_k - after_conf / one_m_a)
            + sd_bar * (frag.depth * t_k - after_depth / one_m_a)
            + o_bar_total * final_t / one_m_a;

        after_color += color_k * weight;
        after_conf += conf_k * weight;
        after_depth += frag.depth * weight;

        // alpha = min(o * g, clamp); no gradient once clamped.
        let o = record.opacities[si];
        if o * frag.gauss >= config.alpha_clamp {
            continue;
        }
        acc.opacity[si] += alpha_bar * frag.gauss;
        alpha_bar *= o; // now d/d gauss
        gauss_backward(record, acc, si, &pix, alpha_bar, frag.gauss);
        let _ = surfels;
    }
}

fn normal_pixel_backward<T: Real>(
    record: &ForwardRecord<T>,
    config: &RenderConfig<T>,
    acc: &mut SplatAccum<T>,
    x: usize,
    y: usize,
    n_map_bar: &Vector3<T>,
) {
    let idx = y * record.width + x;
    let pass: &PassRecord<T> = &record.normal_pass;
    let frags = &pass.frags[idx];
    if frags.is_empty() {
        return;
    }
    let m = frags.len();
    let pix = Vector2::new(T::c(x as f64 + 0.5), T::c(y as f64 + 0.5));

    let mut trans = Vec::with_capacity(m);
    let mut t = T::one();
    let mut nsum = Vector3::zeros();
    for frag in frags {
        trans.push(t);
        nsum += record.splats[frag.splat as usize].normal_cam * (frag.alpha * t);
        t *= T::one() - frag.alpha;
    }
    let coverage = T::one() - t;
    let norm = nsum.norm();
    if coverage < config.coverage_eps || norm <= T::c(1e-12) {
        return;
    }
    // N = nsum / |nsum|.
    let unit = nsum / norm;
    let nsum_bar = (n_map_bar - unit * unit.dot(n_map_bar)) / norm;

    let mut after = Vector3::zeros();
    for k in (0..m).rev() {
        let frag = &frags[k];
        let si = frag.splat as usize;
        let t_k = trans[k];
        let weight = frag.alpha * t_k;
        let one_m_a = T::one() - frag.alpha;
        let payload = record.splats[si].normal_cam;

        acc.normal_cam[si] += nsum_bar * weight;
        let mut alpha_bar = nsum_bar.dot(&(payload * t_k - after / one_m_a));
        after += payload * weight;

        let o = record.opacities[si];
        if o * frag.gauss >= config.alpha_clamp {
            continue;
        }
        acc.opacity[si] += alpha_bar * frag.gauss;
        alpha_bar *= o;
        gauss_backward(record, acc, si, &pix, alpha_bar, frag.gauss);
    }
}

/// Chain an adjoint of the Gaussian footprint weight into the screen mean
/// and covariance accumulators.
fn gauss_backward<T: Real>(
    record: &ForwardRecord<T>,
    acc: &mut SplatAccum<T>,
    si: usize,
    pix: &Vector2<T>,
    gauss_bar: T,
    gauss: T,
) {
    let splat = &record.splats[si];
    let d = pix - splat.mean2d;
    let cd = splat.conic * d;
    // g = exp(-0.5 d^T conic d):
    //   dg/dmean = g * conic d, dg/dcov = 0.5 g (conic d)(conic d)^T.
    acc.mean2d[si] += cd * (gauss_bar * gauss);
    acc.cov2d[si] += cd * cd.transpose() * (gauss_bar * gauss * T::c(0.5));
}
