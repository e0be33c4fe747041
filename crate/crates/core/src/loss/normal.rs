//! Geometry supervision: cosine losses, depth-to-normal conversion with its
//! adjoint, the Eq. (5)/(7) geometry losses, and the Eq. (8) supervision
//! schedule.

use nalgebra::Vector3;

use crate::geometry::maps::{ScalarMap, VectorMap};
use crate::geometry::{Buffer2, Camera};
use crate::scalar::Real;

const ZERO_EPS: f64 = 1e-12;

fn valid<T: Real>(v: &Vector3<T>) -> bool {
    v.norm_squared() > T::c(ZERO_EPS)
}

fn masked<T: Real>(mask: Option<&ScalarMap<T>>, idx: usize) -> bool {
    mask.map_or(true, |m| m.data[idx] >= T::c(0.5))
}

/// Mean of (1 − A·B) over pixels where both maps are nonzero and the mask
/// holds; zero when no pixel qualifies.
pub fn cosine_loss<T: Real>(
    a: &VectorMap<T>,
    b: &VectorMap<T>,
    mask: Option<&ScalarMap<T>>,
) -> T {
    let mut sum = T::zero();
    let mut count = 0usize;
    for i in 0..a.data.len() {
        if valid(&a.data[i]) && valid(&b.data[i]) && masked(mask, i) {
            sum += T::one() - a.data[i].dot(&b.data[i]);
            count += 1;
        }
    }
    if count == 0 {
        T::zero()
    } else {
        sum / T::c(count as f64)
    }
}

/// Backward of [`cosine_loss`] with respect to `a` (and `b` when a buffer
/// is supplied); returns the loss.
pub fn cosine_loss_backward<T: Real>(
    a: &VectorMap<T>,
    b: &VectorMap<T>,
    mask: Option<&ScalarMap<T>>,
    upstream: T,
    a_bar: &mut VectorMap<T>,
    mut b_bar: Option<&mut VectorMap<T>>,
) -> T {
    let count = (0..a.data.len())
        .filter(|&i| valid(&a.data[i]) && valid(&b.data[i]) && masked(mask, i))
        .count();
    if count == 0 {
        return T::zero();
    }
    let scale = upstream / T::c(count as f64);
    let mut sum = T::zero();
    for i in 0..a.data.len() {
        if valid(&a.data[i]) && valid(&b.data[i]) && masked(mask, i) {
            sum += T::one() - a.data[i].dot(&b.data[i]);
            a_bar.data[i] -= b.data[i] * scale;
            if let Some(ref mut bb) = b_bar {
                bb.data[i] -= a.data[i] * scale;
            }
        }
    }
    sum / T::c(count as f64)
}

/// F in Eq. (5): back-project the depth map and take normalized
/// central-difference cross products, oriented toward the camera. Pixels on
/// the border or adjacent to invalid (zero) depth get a zero normal.
pub fn depth_to_normal<T: Real>(depth: &ScalarMap<T>, camera: &Camera<T>) -> VectorMap<T> {
    let (w, h) = (depth.width, depth.height);
    let mut out = Buffer2::filled(w, h, Vector3::zeros());
    let point = |x: usize, y: usize| {
        let d = depth.data[y * w + x];
        camera.pixel_ray(T::c(x as f64 + 0.5), T::c(y as f64 + 0.5)) * d
    };
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let neighbors = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1), (x, y)];
            if neighbors.iter().any(|&(nx, ny)| depth.data[ny * w + nx] <= T::zero()) {
                continue;
            }
            let tx = point(x + 1, y) - point(x - 1, y);
            let ty = point(x, y + 1) - point(x, y - 1);
            let c = tx.cross(&ty);
            let n = c.norm();
            if n <= T::c(ZERO_EPS) {
                continue;
            }
            let mut normal = c / n;
            // Camera looks along +z; a visible surface faces the viewer.
            if normal.z > T::zero() {
                normal = -normal;
            }
            out.data[y * w + x] = normal;
        }
    }
    out
}

/// Adjoint of [`depth_to_normal`]: normal-map adjoint in, depth-map adjoint
/// accumulated.
pub fn depth_to_normal_backward<T: Real>(
    depth: &ScalarMap<T>,
    camera: &Camera<T>,
    normal_bar: &VectorMap<T>,
    depth_bar: &mut ScalarMap<T>,
) {
    let (w, h) = (depth.width, depth.height);
    let ray = |x: usize, y: usize| camera.pixel_ray(T::c(x as f64 + 0.5), T::c(y as f64 + 0.5));
    let point = |x: usize, y: usize| ray(x, y) * depth.data[y * w + x];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let n_bar = normal_bar.data[y * w + x];
            if n_bar == Vector3::zeros() {
                continue;
            }
            let neighbors = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1), (x, y)];
            if neighbors.iter().any(|&(nx, ny)| depth.data[ny * w + nx] <= T::zero()) {
                continue;
            }
            let tx = point(x + 1, y) - point(x - 1, y);
            let ty = point(x, y + 1) - point(x, y - 1);
            let c = tx.cross(&ty);
            let norm = c.norm();
            if norm <= T::c(ZERO_EPS) {
                continue;
            }
            let flip = if (c / norm).z > T::zero() { -T::one() } else { T::one() };
            let unit = c * (flip / norm);
            // normal = flip * c/|c|.
            let c_bar = (n_bar - unit * unit.dot(&n_bar)) * (flip / norm);
            // c = tx × ty: tx_bar = ty × c_bar, ty_bar = c_bar × tx.
            let tx_bar = ty.cross(&c_bar);
            let ty_bar = c_bar.cross(&tx);
            depth_bar.data[y * w + x - 1] -= ray(x - 1, y).dot(&tx_bar);
            depth_bar.data[y * w + x + 1] += ray(x + 1, y).dot(&tx_bar);
            depth_bar.data[(y - 1) * w + x] -= ray(x, y - 1).dot(&ty_bar);
            depth_bar.data[(y + 1) * w + x] += ray(x, y + 1).dot(&ty_bar);
        }
    }
}

/// Eq. (5): λ_n·L_cos(N_g, N) + λ_s·L_cos(N_g, F(D_g)), masked.
pub fn l_geo<T: Real>(
    n_g: &VectorMap<T>,
    d_g: &ScalarMap<T>,
    n: &VectorMap<T>,
    mask: Option<&ScalarMap<T>>,
    camera: &Camera<T>,
    lambda_n: T,
    lambda_s: T,
) -> T {
    let from_depth = depth_to_normal(d_g, camera);
    lambda_n * cosine_loss(n_g, n, mask) + lambda_s * cosine_loss(n_g, &from_depth, mask)
}

/// Eq. (7): L_geo plus the confidence-gated second pass whose L_s^a term
/// compares N (not N_g) against F(D_g). The confidence map enters as a
/// constant weight.
pub fn l_geo_adaptive<T: Real>(
    n_g: &VectorMap<T>,
    d_g: &ScalarMap<T>,
    n: &VectorMap<T>,
    mask: Option<&ScalarMap<T>>,
    f_g: &ScalarMap<T>,
    camera: &Camera<T>,
    lambda_n: T,
    lambda_s: T,
) -> T {
    let base = l_geo(n_g, d_g, n, mask, camera, lambda_n, lambda_s);
    let from_depth = depth_to_normal(d_g, camera);
    let mut sum = T::zero();
    let mut count = 0usize;
    for i in 0..n.data.len() {
        if valid(&n_g.data[i]) && valid(&n.data[i]) && valid(&from_depth.data[i]) && masked(mask, i)
        {
            let term = lambda_n * (T::one() - n_g.data[i].dot(&n.data[i]))
                + lambda_s * (T::one() - n.data[i].dot(&from_depth.data[i]));
            sum += f_g.data[i] * term;
            count += 1;
        }
    }
    if count > 0 {
        base + sum / T::c(count as f64)
    } else {
        base
    }
}

/// Backward of [`l_geo_adaptive`] into the rendered normal-map and
/// depth-map adjoints (F_g detached); returns the loss.
#[allow(clippy::too_many_arguments)]
pub fn l_geo_adaptive_backward<T: Real>(
    n_g: &VectorMap<T>,
    d_g: &ScalarMap<T>,
    n: &VectorMap<T>,
    mask: Option<&ScalarMap<T>>,
    f_g: Option<&ScalarMap<T>>,
    camera: &Camera<T>,
    lambda_n: T,
    lambda_s: T,
    upstream: T,
    normal_bar: &mut VectorMap<T>,
    depth_bar: &mut ScalarMap<T>,
) -> T {
    let from_depth = depth_to_normal(d_g, camera);
    let mut fd_bar = Buffer2::filled(d_g.width, d_g.height, Vector3::zeros());

    let cos_n = cosine_loss_backward(n, n_g, mask, upstream * lambda_n, normal_bar, None);
    let cos_s = cosine_loss_backward(&from_depth, n_g, mask, upstream * lambda_s, &mut fd_bar, None);
    let mut total = lambda_n * cos_n + lambda_s * cos_s;

    if let Some(f_g) = f_g {
        let count = (0..n.data.len())
            .filter(|&i| {
                valid(&n_g.data[i])
                    && valid(&n.data[i])
                    && valid(&from_depth.data[i])
                    && masked(mask, i)
            })
            .count();
        if count > 0 {
            let scale = upstream / T::c(count as f64);
            let mut sum = T::zero();
            for i in 0..n.data.len() {
                if valid(&n_g.data[i])
                    && valid(&n.data[i])
                    && valid(&from_depth.data[i])
                    && masked(mask, i)
                {
                    let fg = f_g.data[i];
                    let term = lambda_n * (T::one() - n_g.data[i].dot(&n.data[i]))
                        + lambda_s * (T::one() - n.data[i].dot(&from_depth.data[i]));
                    sum += fg * term;
                    normal_bar.data[i] -=
                        (n_g.data[i] * lambda_n + from_depth.data[i] * lambda_s) * (fg * scale);
                    fd_bar.data[i] -= n.data[i] * (fg * lambda_s * scale);
                }
            }
            total += sum / T::c(count as f64);
        }
    }

    depth_to_normal_backward(d_g, camera, &fd_bar, depth_bar);
    total
}

/// Eq. (8): N_c while iteration ≤ T_i, afterwards F_v ⊙ N_v. The
/// confidence stays as the target magnitude so the cosine-loss gradient
/// is automatically downweighted where the volume branch is unsure.
pub fn normal_supervision<T: Real>(
    iteration: usize,
    t_i: usize,
    n_c: &VectorMap<T>,
    n_v: &VectorMap<T>,
    f_v: &ScalarMap<T>,
) -> VectorMap<T> {
    if iteration <= t_i {
        return n_c.clone();
    }
    let mut out = Buffer2::filled(n_v.width, n_v.height, Vector3::zeros());
    for i in 0..n_v.data.len() {
        let scaled = n_v.data[i] * f_v.data[i];
        if scaled.norm() > T::c(ZERO_EPS) {
            out.data[i] = scaled.normalize();
        }
    }
    out
}
