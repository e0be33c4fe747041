//! Sphere-traced synthetic ground truth: per-view color, depth, normal and
//! mask bundles over a camera ring.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::maps::{ScalarMap, VectorMap};
use crate::geometry::{Buffer2, Camera};
use crate::scalar::Real;

use super::shapes::{shade, union_sdf, SceneShape};

/// Declarative scene description, the `[scene]` block of a config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub resolution: usize,
    pub view_count: usize,
    pub holdout_count: usize,
    pub camera_radius: f64,
    pub camera_elevation_deg: f64,
    pub fov_y: f64,
    pub near: f64,
    pub far: f64,
    pub light_dir: [f64; 3],
    pub background: [f64; 3],
    pub shapes: Vec<SceneShape>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 7,
            resolution: 64,
            view_count: 16,
            holdout_count: 4,
            camera_radius: 2.5,
            camera_elevation_deg: 20.0,
            fov_y: 0.9,
            near: 0.05,
            far: 100.0,
            light_dir: [0.4, 0.8, -0.45],
            background: [0.0, 0.0, 0.0],
            shapes: Vec::new(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::InvalidArgument("scene spec lists no shapes".into()));
        }
        if self.resolution == 0 || self.view_count == 0 {
            return Err(Error::InvalidArgument(
                "scene spec needs resolution and view_count > 0".into(),
            ));
        }
        if self.camera_radius <= 0.0 || self.fov_y <= 0.0 {
            return Err(Error::InvalidArgument(
                "scene spec camera_radius and fov_y must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ground truth for one camera.
#[derive(Debug, Clone)]
pub struct ViewBundle<T: Real> {
    pub camera: Camera<T>,
    pub color: VectorMap<T>,
    pub depth: ScalarMap<T>,
    /// Camera-frame unit normals; zero off the mask.
    pub normal: VectorMap<T>,
    pub mask: ScalarMap<T>,
}

/// A generated scene: training views plus held-out evaluation views.
#[derive(Debug, Clone)]
pub struct SyntheticScene<T: Real> {
    pub spec: SceneSpec,
    pub train_views: Vec<ViewBundle<T>>,
    pub holdout_views: Vec<ViewBundle<T>>,
}

fn ring_camera<T: Real>(spec: &SceneSpec, phi: f64, elevation_deg: f64) -> Camera<T> {
    let elev = elevation_deg.to_radians();
    let eye = Vector3::new(
        T::c(spec.camera_radius * elev.cos() * phi.cos()),
        T::c(spec.camera_radius * elev.sin()),
        T::c(spec.camera_radius * elev.cos() * phi.sin()),
    );
    Camera::look_at(
        eye,
        Vector3::zeros(),
        Vector3::new(T::zero(), T::one(), T::zero()),
        T::c(spec.fov_y),
        spec.resolution,
        spec.resolution,
        T::c(spec.near),
        T::c(spec.far),
    )
}

/// Sphere-trace one view.
pub fn trace_view<T: Real>(spec: &SceneSpec, camera: Camera<T>) -> ViewBundle<T> {
    let res = spec.resolution;
    let mut color = Buffer2::filled(
        res,
        res,
        Vector3::new(
            T::c(spec.background[0]),
            T::c(spec.background[1]),
            T::c(spec.background[2]),
        ),
    );
    let mut depth = Buffer2::filled(res, res, T::zero());
    let mut normal = Buffer2::filled(res, res, Vector3::zeros());
    let mut mask = Buffer2::filled(res, res, T::zero());
    let origin = camera.position();
    let light = Vector3::new(
        T::c(spec.light_dir[0]),
        T::c(spec.light_dir[1]),
        T::c(spec.light_dir[2]),
    )
    .normalize();
    let far = T::c(spec.far);
    let eps = T::c(1e-7);

    for y in 0..res {
        for x in 0..res {
            let dir = camera
                .pixel_ray_world(T::c(x as f64 + 0.5), T::c(y as f64 + 0.5))
                .normalize();
            let mut t = T::zero();
            let mut hit = false;
            for _ in 0..256 {
                let p = origin + dir * t;
                let (d, _) = union_sdf(&spec.shapes, &p);
                if d < eps {
                    hit = true;
                    break;
                }
                t += d;
                if t > far {
                    break;
                }
            }
            if !hit {
                continue; // non-converged or escaped: background pixel
            }
            let p = origin + dir * t;
            let (_, who) = union_sdf(&spec.shapes, &p);
            let n_world = spec.shapes[who].shape.gradient(&p);
            let idx = y * res + x;
            color.data[idx] = shade(&spec.shapes[who].material, &n_world, &dir, &light);
            depth.data[idx] = camera.to_camera(&p).z;
            normal.data[idx] = camera.rotation * n_world;
            mask.data[idx] = T::one();
        }
    }
    ViewBundle {
        camera,
        color,
        depth,
        normal,
        mask,
    }
}

/// Generate every training and held-out view; deterministic in the spec.
pub fn generate_scene<T: Real>(spec: &SceneSpec) -> Result<SyntheticScene<T>> {
    spec.validate()?;
    let mut train_views = Vec::with_capacity(spec.view_count);
    for i in 0..spec.view_count {
        let phi = 2.0 * std::f64::consts::PI * i as f64 / spec.view_count as f64;
        train_views.push(trace_view(spec, ring_camera(spec, phi, spec.camera_elevation_deg)));
    }
    // Held-out ring interleaves the training azimuths at a nearby elevation.
    let mut holdout_views = Vec::with_capacity(spec.holdout_count);
    for i in 0..spec.holdout_count {
        let phi = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / spec.holdout_count.max(1) as f64;
        holdout_views.push(trace_view(
            spec,
            ring_camera(spec, phi, spec.camera_elevation_deg + 8.0),
        ));
    }
    Ok(SyntheticScene {
        spec: spec.clone(),
        train_views,
        holdout_views,
    })
}

/// Rotate the prior normals inside a pixel rectangle by a fixed angle about
/// the camera x axis — the corrupted-N_c input of the confidence ablation.
/// Only masked pixels change.
pub fn corrupt_normals_region<T: Real>(
    view: &mut ViewBundle<T>,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    angle_deg: f64,
) {
    let a = T::c(angle_deg.to_radians());
    let (s, c) = (a.sin(), a.cos());
    let w = view.normal.width;
    for y in y0..y1.min(view.normal.height) {
        for x in x0..x1.min(w) {
            let idx = y * w + x;
            if view.mask.data[idx] < T::c(0.5) {
                continue;
            }
            let n = view.normal.data[idx];
            view.normal.data[idx] = Vector3::new(n.x, c * n.y - s * n.z, s * n.y + c * n.z);
        }
    }
}

/// Points on the analytic surface, found by projecting random points along
/// the SDF gradient; deterministic in the seed.
pub fn surface_samples<T: Real>(shapes: &[SceneShape], count: usize, seed: u64) -> Vec<Vector3<T>> {
    use rand::Rng;
    let mut rng = super::testgen::rng(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < count * 20 {
        attempts += 1;
        let mut p = Vector3::new(
            T::c(rng.gen_range(-1.2..1.2)),
            T::c(rng.gen_range(-1.2..1.2)),
            T::c(rng.gen_range(-1.2..1.2)),
        );
        for _ in 0..24 {
            let (d, who) = union_sdf(shapes, &p);
            p -= shapes[who].shape.gradient(&p) * d;
            if d.abs() < T::c(1e-9) {
                break;
            }
        }
        if union_sdf(shapes, &p).0.abs() < T::c(1e-6) {
            out.push(p);
        }
    }
    out
}

/// True when `p` is inside the camera frustum and is the first surface the
/// camera sees along the ray towards it.
pub fn point_visible<T: Real>(spec: &SceneSpec, camera: &Camera<T>, p: &Vector3<T>) -> bool {
    let pc = camera.to_camera(p);
    if pc.z <= T::c(1e-6) {
        return false;
    }
    let uv = camera.project(&pc);
    if uv.x < T::zero()
        || uv.y < T::zero()
        || uv.x >= T::c(camera.width as f64)
        || uv.y >= T::c(camera.height as f64)
    {
        return false;
    }
    let origin = camera.position();
    let dist = (p - origin).norm();
    let dir = (p - origin) / dist;
    // Sphere-trace towards the point; occluded iff the march stops short.
    let stop = dist - T::c(1e-4);
    let mut t = T::zero();
    for _ in 0..256 {
        let (d, _) = union_sdf(&spec.shapes, &(origin + dir * t));
        if d < T::c(1e-7) {
            return false;
        }
        t += d;
        if t >= stop {
            return true;
        }
    }
    false
}

/// Surface samples restricted to points seen by at least one of the given
/// cameras — the observation-masked ground truth for Chamfer evaluation
/// (unobserved surface cannot be reconstructed by any method).
pub fn observed_surface_samples<T: Real>(
    spec: &SceneSpec,
    cameras: &[Camera<T>],
    count: usize,
    seed: u64,
) -> Vec<Vector3<T>> {
    surface_samples(&spec.shapes, count, seed)
        .into_iter()
        .filter(|p| cameras.iter().any(|c| point_visible(spec, c, p)))
        .collect()
}
