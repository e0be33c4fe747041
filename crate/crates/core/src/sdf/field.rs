//! Trainable voxel field: signed distance, radiance and confidence grids
//! with trilinear interpolation and an analytic spatial derivative.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};

/// Corner indices and interpolation weights of one trilinear lookup, plus
/// the weight derivatives and the grid-to-world coordinate scale.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearStencil<T> {
    pub idx: [usize; 8],
    pub w: [T; 8],
    /// dW/d(local coordinate) per axis.
    pub dw: [[T; 8]; 3],
    /// d(local coordinate)/d(world coordinate) per axis.
    pub scale: Vector3<T>,
}

fn stencil<T: Real>(
    x: &Vector3<T>,
    resolution: usize,
    bounds_min: &Vector3<T>,
    bounds_max: &Vector3<T>,
) -> TrilinearStencil<T> {
    let last = T::c((resolution - 1) as f64);
    let mut cell = [0usize; 3];
    let mut f = Vector3::zeros();
    let mut scale = Vector3::zeros();
    for a in 0..3 {
        let extent = bounds_max[a] - bounds_min[a];
        // Clamped-border lookup: out-of-bounds points read the border cell
        // at its edge, keeping that cell's interpolant derivative.
        let g = ((x[a] - bounds_min[a]) / extent * last)
            .max(T::zero())
            .min(last);
        let i = g.floor().f64().min((resolution - 2) as f64) as usize;
        cell[a] = i;
        f[a] = g - T::c(i as f64);
        scale[a] = last / extent;
    }
    let stride_y = resolution;
    let stride_z = resolution * resolution;
    let base = cell[0] + cell[1] * stride_y + cell[2] * stride_z;
    let mut idx = [0usize; 8];
    let mut w = [T::zero(); 8];
    let mut dw = [[T::zero(); 8]; 3];
    for k in 0..8 {
        let (cx, cy, cz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
        idx[k] = base + cx + cy * stride_y + cz * stride_z;
        let wx = if cx == 1 { f.x } else { T::one() - f.x };
        let wy = if cy == 1 { f.y } else { T::one() - f.y };
        let wz = if cz == 1 { f.z } else { T::one() - f.z };
        w[k] = wx * wy * wz;
        let sx = if cx == 1 { T::one() } else { -T::one() };
        let sy = if cy == 1 { T::one() } else { -T::one() };
        let sz = if cz == 1 { T::one() } else { -T::one() };
        dw[0][k] = sx * wy * wz;
        dw[1][k] = wx * sy * wz;
        dw[2][k] = wx * wy * sz;
    }
    TrilinearStencil { idx, w, dw, scale }
}

/// The B_v branch: SDF, radiance and confidence as dense trilinear grids
/// sharing one axis-aligned bounding box, plus the trainable sigmoid
/// sharpness of the SDF-to-alpha conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSdfField<T: Real> {
    pub resolution: usize,
    /// Confidence grid edge length (half the main resolution).
    pub conf_resolution: usize,
    pub bounds_min: Vector3<T>,
    pub bounds_max: Vector3<T>,
    pub sdf: Vec<T>,
    pub radiance: Vec<Vector3<T>>,
    /// Raw logits; activated through a sigmoid on query.
    pub confidence_logit: Vec<T>,
    /// Sharpness s > 0, stored in log-space.
    pub log_sharpness: T,
}

impl<T: Real> VoxelSdfField<T> {
    /// Neutral initialization: SDF of a centered sphere with radius half the
    /// smallest half-extent, mid-gray radiance, zero confidence logits,
    /// sharpness 10.
    pub fn new(resolution: usize, bounds_min: Vector3<T>, bounds_max: Vector3<T>) -> Result<Self> {
        if resolution < 4 || resolution % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be even and at least 4, got {resolution}"
            )));
        }
        for a in 0..3 {
            if !(bounds_max[a] > bounds_min[a]) {
                return Err(Error::InvalidArgument("degenerate field bounds".into()));
            }
        }
        let center = (bounds_min + bounds_max) / T::c(2.0);
        let half = (bounds_max - bounds_min) / T::c(2.0);
        let radius = half.x.min(half.y).min(half.z) * T::c(0.5);
        let n3 = resolution * resolution * resolution;
        let mut sdf = Vec::with_capacity(n3);
        let last = T::c((resolution - 1) as f64);
        for z in 0..resolution {
            for y in 0..resolution {
                for x in 0..resolution {
                    let p = Vector3::new(
                        bounds_min.x + (bounds_max.x - bounds_min.x) * T::c(x as f64) / last,
                        bounds_min.y + (bounds_max.y - bounds_min.y) * T::c(y as f64) / last,
                        bounds_min.z + (bounds_max.z - bounds_min.z) * T::c(z as f64) / last,
                    );
                    sdf.push((p - center).norm() - radius);
                }
            }
        }
        let conf_resolution = resolution / 2;
        Ok(VoxelSdfField {
            resolution,
            conf_resolution,
            bounds_min,
            bounds_max,
            sdf,
            radiance: vec![Vector3::from_element(T::c(0.5)); n3],
            confidence_logit: vec![T::zero(); conf_resolution.pow(3)],
            log_sharpness: T::c(10.0f64.ln()),
        })
    }

    pub fn sharpness(&self) -> T {
        self.log_sharpness.exp()
    }

    pub fn stencil(&self, x: &Vector3<T>) -> TrilinearStencil<T> {
        stencil(x, self.resolution, &self.bounds_min, &self.bounds_max)
    }

    pub fn conf_stencil(&self, x: &Vector3<T>) -> TrilinearStencil<T> {
        stencil(x, self.conf_resolution, &self.bounds_min, &self.bounds_max)
    }

    /// Interpolated SDF value and its analytic spatial gradient.
    pub fn sdf_query(&self, x: &Vector3<T>) -> (T, Vector3<T>) {
        let st = self.stencil(x);
        let mut value = T::zero();
        let mut grad = Vector3::zeros();
        for k in 0..8 {
            let v = self.sdf[st.idx[k]];
            value += st.w[k] * v;
            for a in 0..3 {
                grad[a] += st.dw[a][k] * v;
            }
        }
        grad.component_mul_assign(&st.scale);
        (value, grad)
    }

    pub fn radiance_query(&self, x: &Vector3<T>) -> Vector3<T> {
        let st = self.stencil(x);
        let mut value = Vector3::zeros();
        for k in 0..8 {
            value += self.radiance[st.idx[k]] * st.w[k];
        }
        value
    }

    /// Activated confidence f^v in (0, 1).
    pub fn confidence_query(&self, x: &Vector3<T>) -> T {
        let st = self.conf_stencil(x);
        let mut logit = T::zero();
        for k in 0..8 {
            logit += st.w[k] * self.confidence_logit[st.idx[k]];
        }
        sigmoid(logit)
    }

    /// Total trainable scalar count across the three grids plus sharpness.
    pub fn parameter_count(&self) -> usize {
        self.sdf.len() + 3 * self.radiance.len() + self.confidence_logit.len() + 1
    }

    /// Points on grid edges where the interpolated SDF crosses zero,
    /// linearly interpolated; the level-set sample set used for Chamfer
    /// evaluation and PLY export.
    pub fn level_set_points(&self) -> Vec<Vector3<T>> {
        let r = self.resolution;
        let last = T::c((r - 1) as f64);
        let pos = |i: usize, a: usize| {
            self.bounds_min[a] + (self.bounds_max[a] - self.bounds_min[a]) * T::c(i as f64) / last
        };
        let at = |x: usize, y: usize, z: usize| self.sdf[x + y * r + z * r * r];
        let mut points = Vec::new();
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    let v0 = at(x, y, z);
                    for (axis, (nx, ny, nz)) in
                        [(x + 1, y, z), (x, y + 1, z), (x, y, z + 1)].iter().enumerate()
                    {
                        if *nx >= r || *ny >= r || *nz >= r {
                            continue;
                        }
                        let v1 = at(*nx, *ny, *nz);
                        if (v0 < T::zero()) == (v1 < T::zero()) || v0 == v1 {
                            continue;
                        }
                        let t = v0 / (v0 - v1);
                        let mut p = Vector3::new(pos(x, 0), pos(y, 1), pos(z, 2));
                        p[axis] += (self.bounds_max[axis] - self.bounds_min[axis]) / last * t;
                        points.push(p);
                    }
                }
            }
        }
        points
    }
}

/// Gradients for every field parameter.
#[derive(Debug, Clone)]
pub struct FieldGrads<T: Real> {
    pub sdf: Vec<T>,
    pub radiance: Vec<Vector3<T>>,
    pub confidence_logit: Vec<T>,
    pub log_sharpness: T,
}

impl<T: Real> FieldGrads<T> {
    pub fn zeros_like(field: &VoxelSdfField<T>) -> Self {
        FieldGrads {
            sdf: vec![T::zero(); field.sdf.len()],
            radiance: vec![Vector3::zeros(); field.radiance.len()],
            confidence_logit: vec![T::zero(); field.confidence_logit.len()],
            log_sharpness: T::zero(),
        }
    }

    /// Chain an SDF value adjoint into the grid.
    pub fn add_sdf_value(&mut self, st: &TrilinearStencil<T>, bar: T) {
        for k in 0..8 {
            self.sdf[st.idx[k]] += st.w[k] * bar;
        }
    }

    /// Chain an SDF spatial-gradient adjoint into the grid.
    pub fn add_sdf_gradient(&mut self, st: &TrilinearStencil<T>, bar: &Vector3<T>) {
        for k in 0..8 {
            let mut g = T::zero();
            for a in 0..3 {
                g += st.dw[a][k] * st.scale[a] * bar[a];
            }
            self.sdf[st.idx[k]] += g;
        }
    }
}

/// Mean of (|∇S| − 1)² over the sample points.
pub fn eikonal_residual<T: Real>(field: &VoxelSdfField<T>, points: &[Vector3<T>]) -> T {
    if points.is_empty() {
        return T::zero();
    }
    let mut sum = T::zero();
    for p in points {
        let (_, grad) = field.sdf_query(p);
        let r = grad.norm() - T::one();
        sum += r * r;
    }
    sum / T::c(points.len() as f64)
}

/// Backward of [`eikonal_residual`]; accumulates into `grads` and returns
/// the residual.
pub fn eikonal_backward<T: Real>(
    field: &VoxelSdfField<T>,
    points: &[Vector3<T>],
    loss_bar: T,
    grads: &mut FieldGrads<T>,
) -> T {
    if points.is_empty() {
        return T::zero();
    }
    let inv_n = T::one() / T::c(points.len() as f64);
    let mut sum = T::zero();
    for p in points {
        let st = field.stencil(p);
        let (_, grad) = field.sdf_query(p);
        let norm = grad.norm();
        let r = norm - T::one();
        sum += r * r;
        if norm > T::c(1e-12) {
            let g_bar = grad * (T::c(2.0) * r / norm * inv_n * loss_bar);
            grads.add_sdf_gradient(&st, &g_bar);
        }
    }
    sum * inv_n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::fd::grads_agree;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn unit_field(res: usize) -> VoxelSdfField<f64> {
        VoxelSdfField::new(
            res,
            Vector3::new(-1.0, -1.0, -1.0),
            Vector3::new(1.0, 1.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn sphere_init_center_value() {
        let field = unit_field(32);
        let (v, _) = field.sdf_query(&Vector3::zeros());
        // Radius 0.5 of the unit half-extent; cell-size tolerance.
        assert!((v + 0.5).abs() < 2.0 / 31.0, "center sdf {v}");
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let mut field = unit_field(8);
        field.sdf.iter_mut().for_each(|v| *v = 0.37);
        let (v, g) = field.sdf_query(&Vector3::new(0.21, -0.53, 0.11));
        assert_relative_eq!(v, 0.37, epsilon = 1e-12);
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn gradient_matches_interpolant_finite_differences() {
        let mut rng = crate::scene::testgen::rng(4);
        let mut field = unit_field(8);
        field.sdf.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let h = 1e-7;
        for _ in 0..50 {
            let p = Vector3::new(
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
            );
            let (_, g) = field.sdf_query(&p);
            for a in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[a] += h;
                pm[a] -= h;
                let fd = (field.sdf_query(&pp).0 - field.sdf_query(&pm).0) / (2.0 * h);
                assert!((g[a] - fd).abs() < 1e-6, "axis {a}: {} vs {}", g[a], fd);
            }
        }
    }

    #[test]
    fn out_of_bounds_reads_clamped_border() {
        let field = unit_field(8);
        let inside = field.sdf_query(&Vector3::new(0.0, 0.0, 1.0)).0;
        let outside = field.sdf_query(&Vector3::new(0.0, 0.0, 5.0)).0;
        assert_relative_eq!(inside, outside, epsilon = 1e-12);
    }

    #[test]
    fn eikonal_on_plane_and_constant() {
        let mut field = unit_field(16);
        // Exact plane SDF sampled on-grid: S = z.
        let r = field.resolution;
        for z in 0..r {
            let zw = -1.0 + 2.0 * z as f64 / (r - 1) as f64;
            for i in 0..r * r {
                field.sdf[i + z * r * r] = zw;
            }
        }
        let pts: Vec<_> = (0..10)
            .map(|i| Vector3::new(0.1 * i as f64 - 0.5, 0.05 * i as f64, 0.3))
            .collect();
        assert!(eikonal_residual(&field, &pts) < 1e-6);

        field.sdf.iter_mut().for_each(|v| *v = 1.0);
        assert_relative_eq!(eikonal_residual(&field, &pts), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eikonal_matches_hand_loop_and_finite_differences() {
        let mut rng = crate::scene::testgen::rng(9);
        let mut field = unit_field(6);
        field.sdf.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        let pts: Vec<_> = (0..8)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                )
            })
            .collect();

        let mut hand = 0.0;
        for p in &pts {
            let (_, g) = field.sdf_query(p);
            hand += (g.norm() - 1.0).powi(2);
        }
        hand /= pts.len() as f64;
        assert_relative_eq!(eikonal_residual(&field, &pts), hand, epsilon = 1e-9);

        let mut grads = FieldGrads::zeros_like(&field);
        eikonal_backward(&field, &pts, 1.0, &mut grads);
        let h = 1e-6;
        let mut checked = 0;
        for i in (0..field.sdf.len()).step_by(17) {
            let mut fp = field.clone();
            fp.sdf[i] += h;
            let mut fm = field.clone();
            fm.sdf[i] -= h;
            let fd = (eikonal_residual(&fp, &pts) - eikonal_residual(&fm, &pts)) / (2.0 * h);
            assert!(
                grads_agree(grads.sdf[i], fd, 1e-3, 1e-6),
                "grid {i}: {} vs {}",
                grads.sdf[i],
                fd
            );
            checked += 1;
        }
        assert!(checked > 5);
    }

    #[test]
    fn level_set_points_lie_on_sphere() {
        let field = unit_field(32);
        let points = field.level_set_points();
        assert!(points.len() > 100);
        for p in &points {
            assert!((p.norm() - 0.5).abs() < 0.05, "point {p:?}");
        }
    }
}
