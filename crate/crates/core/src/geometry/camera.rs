//! Pinhole cameras with a world-to-camera rigid transform. The camera looks
//! along +z in its own frame; pixel (i, j) has its center at (i+0.5, j+0.5).

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<T>,
    /// World-to-camera translation: x_cam = R x_world + t.
    pub translation: Vector3<T>,
    pub near: T,
    pub far: T,
}

impl<T: Real> Camera<T> {
    /// Camera placed at `eye` looking at `target`, with `up` fixing the roll.
    pub fn look_at(
        eye: Vector3<T>,
        target: Vector3<T>,
        up: Vector3<T>,
        fov_y: T,
        width: usize,
        height: usize,
        near: T,
        far: T,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let mut rotation = Matrix3::zeros();
        rotation.set_row(0, &right.transpose());
        rotation.set_row(1, &down.transpose());
        rotation.set_row(2, &forward.transpose());
        let translation = -rotation * eye;
        let half = T::c(0.5);
        let fy = T::c(height as f64) * half / (fov_y * half).tan();
        Camera {
            fx: fy,
            fy,
            cx: T::c(width as f64) * half,
            cy: T::c(height as f64) * half,
            width,
            height,
            rotation,
            translation,
            near,
            far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fx <= T::zero() || self.fy <= T::zero() {
            return Err(Error::InvalidArgument("camera focal lengths must be positive".into()));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).norm();
        if err > T::c(1e-6) {
            return Err(Error::InvalidArgument(format!(
                "camera rotation not orthonormal (deviation {})",
                err.f64()
            )));
        }
        Ok(())
    }

    /// World point into the camera frame.
    pub fn to_camera(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// Camera position in world coordinates.
    pub fn position(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Perspective projection of a camera-frame point to pixel coordinates.
    pub fn project(&self, pc: &Vector3<T>) -> Vector2<T> {
        Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        )
    }

    /// Camera-frame ray direction through a pixel position, with z = 1.
    pub fn pixel_ray(&self, u: T, v: T) -> Vector3<T> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, T::one())
    }

    /// World-frame unit ray direction through a pixel position.
    pub fn pixel_ray_world(&self, u: T, v: T) -> Vector3<T> {
        (self.rotation.transpose() * self.pixel_ray(u, v)).normalize()
    }
}
