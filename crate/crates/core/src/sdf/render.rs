//! Volume rendering of the voxel field: SDF-to-alpha conversion, the
//! transmittance recurrence, confidence accumulation and ray entropy.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};

use super::field::{FieldGrads, VoxelSdfField};

/// Volume-rendering constants.
#[derive(Debug, Clone, Copy)]
pub struct SdfRenderConfig<T> {
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Half-width of the depth-guided fine band (scene units).
    pub guide_band: T,
    /// Use T_i = Π(1 − α_j) instead of exp(−Σ α_j δ_j).
    pub product_transmittance: bool,
    /// Skip the ln(n) normalization of ray entropy.
    pub raw_entropy: bool,
}

impl<T: Real> Default for SdfRenderConfig<T> {
    fn default() -> Self {
        SdfRenderConfig {
            n_coarse: 32,
            n_fine: 16,
            guide_band: T::c(0.1),
            product_transmittance: false,
            raw_entropy: false,
        }
    }
}

/// Strictly increasing sample positions along one ray.
#[derive(Debug, Clone)]
pub struct RaySampleSet<T: Real> {
    pub origin: Vector3<T>,
    /// Unit direction.
    pub direction: Vector3<T>,
    /// Distances along the ray, strictly increasing, length ≥ 2.
    pub t: Vec<T>,
}

impl<T: Real> RaySampleSet<T> {
    pub fn position(&self, i: usize) -> Vector3<T> {
        self.origin + self.direction * self.t[i]
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.len() < 2 {
            return Err(Error::InvalidArgument("ray needs at least 2 samples".into()));
        }
        if self.t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "ray samples must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Coarse samples over [near, far] merged with a fine band around the guide
/// depth when one is available (guide 0 means unguided).
pub fn depth_guided_samples<T: Real>(
    origin: Vector3<T>,
    direction: Vector3<T>,
    near: T,
    far: T,
    guide_depth: T,
    config: &SdfRenderConfig<T>,
) -> RaySampleSet<T> {
    let mut t = Vec::with_capacity(config.n_coarse + config.n_fine);
    let span = far - near;
    let nc = T::c(config.n_coarse as f64);
    for k in 0..config.n_coarse {
        t.push(near + span * (T::c(k as f64) + T::c(0.5)) / nc);
    }
    if guide_depth > T::zero() && config.n_fine > 0 {
        let lo = (guide_depth - config.guide_band).max(near);
        let hi = (guide_depth + config.guide_band).min(far);
        if hi > lo {
            let nf = T::c(config.n_fine as f64);
            for k in 0..config.n_fine {
                t.push(lo + (hi - lo) * (T::c(k as f64) + T::c(0.5)) / nf);
            }
        }
    } else if config.n_fine > 0 {
        // Unguided: the fine budget densifies the uniform sweep.
        let nf = T::c(config.n_fine as f64);
        for k in 0..config.n_fine {
            t.push(near + span * (T::c(k as f64) + T::c(0.25)) / nf);
        }
    }
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t.dedup_by(|a, b| *a == *b);
    RaySampleSet {
        origin,
        direction,
        t,
    }
}

/// Eq. (1): α = max((σ(s·S_i) − σ(s·S_{i+1})) / σ(s·S_i), 0).
///
/// Mathematically α < 1 since σ > 0; rounding can still produce exactly 1
/// when σ(s·S_{i+1}) underflows next to 1, so the result is pinned one ulp
/// below.
pub fn alpha_from_sdf<T: Real>(s_i: T, s_next: T, sharpness: T) -> T {
    let u = sigmoid(sharpness * s_i);
    let v = sigmoid(sharpness * s_next);
    ((u - v) / u)
        .max(T::zero())
        .min(T::one() - T::default_epsilon())
}

/// Gradients of [`alpha_from_sdf`] w.r.t. (S_i, S_{i+1}, sharpness); all
/// zero in the clamped branch.
pub fn alpha_from_sdf_backward<T: Real>(s_i: T, s_next: T, sharpness: T) -> (T, T, T) {
    let u = sigmoid(sharpness * s_i);
    let v = sigmoid(sharpness * s_next);
    if u - v <= T::zero() {
        return (T::zero(), T::zero(), T::zero());
    }
    // α = 1 − v/u: dα/du = v/u², dα/dv = −1/u.
    let da_du = v / (u * u);
    let da_dv = -T::one() / u;
    let du = u * (T::one() - u);
    let dv = v * (T::one() - v);
    let d_si = da_du * du * sharpness;
    let d_snext = da_dv * dv * sharpness;
    let d_sharp = da_du * du * s_i + da_dv * dv * s_next;
    (d_si, d_snext, d_sharp)
}

/// Outputs of one volume-rendered ray.
#[derive(Debug, Clone)]
pub struct RayOutputs<T: Real> {
    pub color: Vector3<T>,
    /// Normalized accumulated SDF-gradient normal; zero when nothing hit.
    pub normal: Vector3<T>,
    pub confidence: T,
    pub depth: T,
    /// Per-interval alphas, the entropy weights.
    pub alphas: Vec<T>,
}

/// Per-interval forward state kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct RayRecord<T: Real> {
    pub sdf: Vec<T>,
    pub alphas: Vec<T>,
    pub trans: Vec<T>,
    pub grads: Vec<Vector3<T>>,
    pub colors: Vec<Vector3<T>>,
    pub confs: Vec<T>,
    pub normal_sum: Vector3<T>,
    pub weight_sum: T,
    pub depth_raw: T,
}

/// Eq. (2) compositing over one sample set; also records everything the
/// backward pass needs.
pub fn volume_render_ray<T: Real>(
    field: &VoxelSdfField<T>,
    samples: &RaySampleSet<T>,
    config: &SdfRenderConfig<T>,
) -> (RayOutputs<T>, RayRecord<T>) {
    let n = samples.t.len();
    let sharpness = field.sharpness();
    let mut sdf = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut confs = Vec::with_capacity(n);
    for i in 0..n {
        let p = samples.position(i);
        let (v, g) = field.sdf_query(&p);
        sdf.push(v);
        grads.push(g);
        colors.push(field.radiance_query(&p));
        confs.push(field.confidence_query(&p));
    }

    let m = n - 1;
    let mut alphas = Vec::with_capacity(m);
    let mut trans = Vec::with_capacity(m);
    let mut color = Vector3::zeros();
    let mut normal_sum = Vector3::zeros();
    let mut confidence = T::zero();
    let mut depth_raw = T::zero();
    let mut weight_sum = T::zero();
    let mut log_t = T::zero();
    let mut prod_t = T::one();
    for i in 0..m {
        let alpha = alpha_from_sdf(sdf[i], sdf[i + 1], sharpness);
        let t_i = if config.product_transmittance {
            prod_t
        } else {
            log_t.exp()
        };
        let w = alpha * t_i;
        color += colors[i] * w;
        confidence += confs[i] * w;
        depth_raw += samples.t[i] * w;
        weight_sum += w;
        let gn = grads[i].norm();
        if gn > T::c(1e-12) {
            normal_sum += grads[i] * (w / gn);
        }
        alphas.push(alpha);
        trans.push(t_i);
        let delta = samples.t[i + 1] - samples.t[i];
        log_t -= alpha * delta;
        prod_t *= T::one() - alpha;
    }

    let nn = normal_sum.norm();
    let outputs = RayOutputs {
        color,
        normal: if nn > T::c(1e-12) {
            normal_sum / nn
        } else {
            Vector3::zeros()
        },
        confidence,
        depth: depth_raw / weight_sum.max(T::c(1e-8)),
        alphas: alphas.clone(),
    };
    let record = RayRecord {
        sdf,
        alphas,
        trans,
        grads,
        colors,
        confs,
        normal_sum,
        weight_sum,
        depth_raw,
    };
    (outputs, record)
}

/// Adjoints of one ray's outputs (entropy targets are detached, so the
/// alphas carry no direct adjoint).
#[derive(Debug, Clone, Copy, Default)]
pub struct RayAdjoints<T: Real> {
    pub color: Vector3<T>,
    pub normal: Vector3<T>,
    pub confidence: T,
    pub depth: T,
}

/// Reverse pass over one recorded ray, accumulating into `grads`.
pub fn volume_render_backward<T: Real>(
    field: &VoxelSdfField<T>,
    samples: &RaySampleSet<T>,
    record: &RayRecord<T>,
    adjoints: &RayAdjoints<T>,
    config: &SdfRenderConfig<T>,
    grads: &mut FieldGrads<T>,
) {
    let m = record.alphas.len();
    let sharpness = field.sharpness();

    // Normal renormalization chain.
    let nn = record.normal_sum.norm();
    let nsum_bar = if nn > T::c(1e-12) {
        let unit = record.normal_sum / nn;
        (adjoints.normal - unit * unit.dot(&adjoints.normal)) / nn
    } else {
        Vector3::zeros()
    };
    // Depth normalization chain.
    let denom = record.weight_sum.max(T::c(1e-8));
    let draw_bar = adjoints.depth / denom;
    let wsum_bar = if record.weight_sum > T::c(1e-8) {
        -adjoints.depth * record.depth_raw / (denom * denom)
    } else {
        T::zero()
    };

    // Per-interval weight adjoints, then alpha adjoints including the
    // transmittance coupling to later intervals.
    let mut w_bar = vec![T::zero(); m];
    let mut payload_normal_bar = vec![Vector3::zeros(); m];
    for i in 0..m {
        let gn = record.grads[i].norm();
        let nhat = if gn > T::c(1e-12) {
            record.grads[i] / gn
        } else {
            Vector3::zeros()
        };
        w_bar[i] = adjoints.color.dot(&record.colors[i])
            + adjoints.confidence * record.confs[i]
            + draw_bar * samples.t[i]
            + wsum_bar
            + nsum_bar.dot(&nhat);
        payload_normal_bar[i] = nsum_bar * (record.alphas[i] * record.trans[i]);
    }

    // T_i couples alpha_j (j < i): exp form dT_i/dα_j = −δ_j T_i,
    // product form dT_i/dα_j = −T_i/(1−α_j). Sweep back with a suffix sum
    // of w_bar·α·T.
    let mut alpha_bar = vec![T::zero(); m];
    let mut suffix = T::zero();
    for i in (0..m).rev() {
        let direct = w_bar[i] * record.trans[i];
        let coupling = if config.product_transmittance {
            -suffix / (T::one() - record.alphas[i]).max(T::c(1e-12))
        } else {
            let delta = samples.t[i + 1] - samples.t[i];
            -suffix * delta
        };
        alpha_bar[i] = direct + coupling;
        suffix += w_bar[i] * record.alphas[i] * record.trans[i];
    }

    // Chain to grids and sharpness.
    let mut sdf_bar = vec![T::zero(); m + 1];
    let mut sharp_bar = T::zero();
    for i in 0..m {
        let (d_si, d_snext, d_sharp) =
            alpha_from_sdf_backward(record.sdf[i], record.sdf[i + 1], sharpness);
        sdf_bar[i] += alpha_bar[i] * d_si;
        sdf_bar[i + 1] += alpha_bar[i] * d_snext;
        sharp_bar += alpha_bar[i] * d_sharp;
    }
    grads.log_sharpness += sharp_bar * sharpness;

    for i in 0..=m {
        let p = samples.position(i);
        let st = field.stencil(&p);
        if sdf_bar[i] != T::zero() {
            grads.add_sdf_value(&st, sdf_bar[i]);
        }
        if i < m {
            // Normal payload n̂ = ∇S/|∇S|.
            let gn = record.grads[i].norm();
            if gn > T::c(1e-12) && payload_normal_bar[i] != Vector3::zeros() {
                let unit = record.grads[i] / gn;
                let b = &payload_normal_bar[i];
                let g_bar = (b - unit * unit.dot(b)) / gn;
                grads.add_sdf_gradient(&st, &g_bar);
            }
            let w = record.alphas[i] * record.trans[i];
            if w != T::zero() {
                // Radiance.
                let c_bar = adjoints.color * w;
                if c_bar != Vector3::zeros() {
                    for k in 0..8 {
                        grads.radiance[st.idx[k]] += c_bar * st.w[k];
                    }
                }
                // Confidence logit through the sigmoid.
                let f_bar = adjoints.confidence * w;
                if f_bar != T::zero() {
                    let f = record.confs[i];
                    let cst = field.conf_stencil(&p);
                    let logit_bar = f_bar * f * (T::one() - f);
                    for k in 0..8 {
                        grads.confidence_logit[cst.idx[k]] += cst.w[k] * logit_bar;
                    }
                }
            }
        }
    }
}

/// Appendix Eq. (3): normalized Shannon entropy of the ray's alpha
/// distribution, returned as a certainty score H ∈ [0, 1] by default.
pub fn ray_entropy<T: Real>(alphas: &[T], raw: bool) -> T {
    let total: T = alphas.iter().copied().sum();
    if total <= T::zero() || alphas.is_empty() {
        return T::zero();
    }
    let mut entropy = T::zero();
    for &a in alphas {
        if a > T::zero() {
            let h = a / total;
            entropy -= h * h.ln();
        }
    }
    if raw {
        T::one() - entropy
    } else if alphas.len() < 2 {
        T::one()
    } else {
        T::one() - entropy / T::c((alphas.len() as f64).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn alpha_worked_value() {
        // s = 10, S_i = 0.1, S_{i+1} = −0.1 → (0.7311 − 0.2689)/0.7311.
        let a: f64 = alpha_from_sdf(0.1, -0.1, 10.0);
        assert!((a - 0.6322).abs() < 1e-4, "alpha {a}");
    }

    #[test]
    fn alpha_clamp_and_equal_values() {
        assert_eq!(alpha_from_sdf(0.2, 0.2, 10.0), 0.0);
        assert_eq!(alpha_from_sdf(-0.1, 0.1, 10.0), 0.0);
        assert_eq!(alpha_from_sdf_backward(-0.1, 0.1, 10.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn alpha_range_over_random_triples() {
        let mut rng = crate::scene::testgen::rng(2);
        use rand::Rng;
        for _ in 0..10_000 {
            let a = alpha_from_sdf(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.1..100.0f64),
            );
            assert!((0.0..1.0).contains(&a));
        }
    }

    #[test]
    fn alpha_backward_matches_finite_differences() {
        let h = 1e-7;
        for (si, sn, s) in [(0.1, -0.1, 10.0), (0.3, 0.1, 4.0), (-0.05, -0.2, 25.0f64)] {
            let (d_si, d_sn, d_s) = alpha_from_sdf_backward(si, sn, s);
            let fd_si = (alpha_from_sdf(si + h, sn, s) - alpha_from_sdf(si - h, sn, s)) / (2.0 * h);
            let fd_sn = (alpha_from_sdf(si, sn + h, s) - alpha_from_sdf(si, sn - h, s)) / (2.0 * h);
            let fd_s = (alpha_from_sdf(si, sn, s + h) - alpha_from_sdf(si, sn, s - h)) / (2.0 * h);
            assert_relative_eq!(d_si, fd_si, epsilon = 1e-5);
            assert_relative_eq!(d_sn, fd_sn, epsilon = 1e-5);
            assert_relative_eq!(d_s, fd_s, epsilon = 1e-5);
        }
    }

    #[test]
    fn entropy_examples() {
        assert_relative_eq!(ray_entropy(&[0.0, 0.7, 0.0], false), 1.0, epsilon = 1e-12);
        assert_relative_eq!(ray_entropy(&[0.25; 8], false), 0.0, epsilon = 1e-12);
        assert_eq!(ray_entropy::<f64>(&[0.0, 0.0], false), 0.0);
        let h = ray_entropy(&[0.75, 0.25], false);
        let expected = 1.0 - (-0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln()) / 2.0f64.ln();
        assert_relative_eq!(h, expected, epsilon = 1e-12);
        assert!((h - 0.189).abs() < 1e-3);
        // Raw form drops the ln(n) normalization.
        let raw = ray_entropy(&[0.75, 0.25], true);
        assert_relative_eq!(raw, 1.0 - 0.5623, epsilon = 1e-4);
    }

    #[test]
    fn guided_samples_properties() {
        let config = SdfRenderConfig::<f64>::default();
        let o = nalgebra::Vector3::zeros();
        let d = nalgebra::Vector3::new(0.0, 0.0, 1.0);
        let unguided = depth_guided_samples(o, d, 0.5, 4.0, 0.0, &config);
        unguided.validate().unwrap();
        assert!(unguided.t.iter().all(|&t| (0.5..=4.0).contains(&t)));

        let guided = depth_guided_samples(o, d, 0.5, 4.0, 2.0, &config);
        guided.validate().unwrap();
        let fine = guided
            .t
            .iter()
            .filter(|&&t| (2.0 - config.guide_band..=2.0 + config.guide_band).contains(&t))
            .count();
        assert!(fine >= config.n_fine, "fine band holds {fine} samples");
    }
}
