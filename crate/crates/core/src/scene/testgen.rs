//! Seeded random surfel scenes and camera rigs, shared by the gradient and
//! compositing test suites.

use nalgebra::{Vector2, Vector3, Vector4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Camera, Surfel, Task};
use crate::scalar::{logit, Real};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random surfels inside a centered box, with moderate opacities so alpha
/// clamp and cutoff boundaries stay away from the finite-difference paths.
pub fn random_surfels<T: Real>(rng: &mut ChaCha8Rng, count: usize, extent: f64) -> Vec<Surfel<T>> {
    (0..count)
        .map(|_| {
            let center = Vector3::new(
                T::c(rng.gen_range(-extent..extent)),
                T::c(rng.gen_range(-extent..extent)),
                T::c(rng.gen_range(-extent..extent)),
            );
            let rotation = Vector4::new(
                T::c(rng.gen_range(-1.0..1.0)),
                T::c(rng.gen_range(-1.0..1.0)),
                T::c(rng.gen_range(-1.0..1.0)),
                T::c(rng.gen_range(-1.0..1.0)),
            )
            .normalize();
            let s = rng.gen_range(0.05..0.25) * extent;
            let order = rng.gen_range(0..=2usize);
            let n_basis = crate::geometry::sh_basis_count(order);
            let sh = (0..n_basis)
                .map(|b| {
                    let amp = if b == 0 { 0.4 } else { 0.1 };
                    Vector3::new(
                        T::c(rng.gen_range(-amp..amp)),
                        T::c(rng.gen_range(-amp..amp)),
                        T::c(rng.gen_range(-amp..amp)),
                    )
                })
                .collect();
            Surfel {
                center,
                rotation,
                log_scale: Vector2::new(T::c(s.ln()), T::c((s * rng.gen_range(0.5..1.5)).ln())),
                opacity_logit: T::c(logit(rng.gen_range(0.2..0.9))),
                confidence_logit: T::c(logit(rng.gen_range(0.2..0.8))),
                sh,
                order,
                task: Task::Common,
            }
        })
        .collect()
}

/// Assign random task-set memberships in place.
pub fn randomize_tasks<T: Real>(rng: &mut ChaCha8Rng, surfels: &mut [Surfel<T>]) {
    for s in surfels.iter_mut() {
        s.task = match rng.gen_range(0..3) {
            0 => Task::Common,
            1 => Task::ColorOnly,
            _ => Task::NormalOnly,
        };
    }
}

/// A camera on the -z axis looking at the origin.
pub fn front_camera<T: Real>(resolution: usize, distance: f64) -> Camera<T> {
    Camera::look_at(
        Vector3::new(T::zero(), T::zero(), T::c(-distance)),
        Vector3::zeros(),
        Vector3::new(T::zero(), T::one(), T::zero()),
        T::c(0.9),
        resolution,
        resolution,
        T::c(0.05),
        T::c(100.0),
    )
}

/// A ring of cameras around the origin at the given elevation angle.
pub fn camera_ring<T: Real>(
    count: usize,
    radius: f64,
    elevation: f64,
    resolution: usize,
) -> Vec<Camera<T>> {
    (0..count)
        .map(|i| {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let eye = Vector3::new(
                T::c(radius * elevation.cos() * phi.cos()),
                T::c(radius * elevation.sin()),
                T::c(radius * elevation.cos() * phi.sin()),
            );
            Camera::look_at(
                eye,
                Vector3::zeros(),
                Vector3::new(T::zero(), T::one(), T::zero()),
                T::c(0.9),
                resolution,
                resolution,
                T::c(0.05),
                T::c(100.0),
            )
        })
        .collect()
}
