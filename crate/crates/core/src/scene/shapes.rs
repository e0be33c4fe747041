//! Analytic signed-distance shapes and their materials for the ground-truth
//! ray tracer.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// One primitive or a union of primitives.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    #[serde(rename = "box")]
    Cuboid {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
}

/// Lambertian albedo plus an optional specular lobe.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSpec {
    pub albedo: [f64; 3],
    pub specular_strength: f64,
    pub specular_exponent: f64,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        MaterialSpec {
            albedo: [0.5, 0.5, 0.5],
            specular_strength: 0.0,
            specular_exponent: 32.0,
        }
    }
}

impl ShapeSpec {
    /// Exact signed distance.
    pub fn sdf<T: Real>(&self, p: &Vector3<T>) -> T {
        match self {
            ShapeSpec::Sphere { center, radius } => {
                let c = Vector3::new(T::c(center[0]), T::c(center[1]), T::c(center[2]));
                (p - c).norm() - T::c(*radius)
            }
            ShapeSpec::Cuboid {
                center,
                half_extents,
            } => {
                let c = Vector3::new(T::c(center[0]), T::c(center[1]), T::c(center[2]));
                let b = Vector3::new(
                    T::c(half_extents[0]),
                    T::c(half_extents[1]),
                    T::c(half_extents[2]),
                );
                let d = p - c;
                let q = Vector3::new(
                    d.x.abs() - b.x,
                    d.y.abs() - b.y,
                    d.z.abs() - b.z,
                );
                let outside = Vector3::new(
                    q.x.max(T::zero()),
                    q.y.max(T::zero()),
                    q.z.max(T::zero()),
                )
                .norm();
                let inside = q.x.max(q.y).max(q.z).min(T::zero());
                outside + inside
            }
        }
    }

    /// Unit gradient of the signed distance (surface normal off the
    /// boundary set of the max/abs branches).
    pub fn gradient<T: Real>(&self, p: &Vector3<T>) -> Vector3<T> {
        match self {
            ShapeSpec::Sphere { center, .. } => {
                let c = Vector3::new(T::c(center[0]), T::c(center[1]), T::c(center[2]));
                let d = p - c;
                let n = d.norm();
                if n > T::c(1e-12) {
                    d / n
                } else {
                    Vector3::new(T::zero(), T::zero(), T::one())
                }
            }
            ShapeSpec::Cuboid {
                center,
                half_extents,
            } => {
                let c = Vector3::new(T::c(center[0]), T::c(center[1]), T::c(center[2]));
                let b = Vector3::new(
                    T::c(half_extents[0]),
                    T::c(half_extents[1]),
                    T::c(half_extents[2]),
                );
                let d = p - c;
                let q = Vector3::new(d.x.abs() - b.x, d.y.abs() - b.y, d.z.abs() - b.z);
                let sign = Vector3::new(d.x.signum(), d.y.signum(), d.z.signum());
                let outside = Vector3::new(
                    q.x.max(T::zero()),
                    q.y.max(T::zero()),
                    q.z.max(T::zero()),
                );
                let on = outside.norm();
                if on > T::c(1e-12) {
                    Vector3::new(
                        outside.x * sign.x,
                        outside.y * sign.y,
                        outside.z * sign.z,
                    ) / on
                } else {
                    // Inside: the normal points along the least-deep axis.
                    let m = q.x.max(q.y).max(q.z);
                    if q.x == m {
                        Vector3::new(sign.x, T::zero(), T::zero())
                    } else if q.y == m {
                        Vector3::new(T::zero(), sign.y, T::zero())
                    } else {
                        Vector3::new(T::zero(), T::zero(), sign.z)
                    }
                }
            }
        }
    }
}

/// Scene geometry: union of primitives, each with its material.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneShape {
    pub shape: ShapeSpec,
    #[serde(default)]
    pub material: MaterialSpec,
}

/// SDF of the union and the index of the closest primitive.
pub fn union_sdf<T: Real>(shapes: &[SceneShape], p: &Vector3<T>) -> (T, usize) {
    let mut best = T::c(f64::INFINITY);
    let mut who = 0;
    for (i, s) in shapes.iter().enumerate() {
        let d = s.shape.sdf(p);
        if d < best {
            best = d;
            who = i;
        }
    }
    (best, who)
}

/// Shaded color at a hit: albedo plus a white specular lobe aligned with
/// the reflected fixed light direction.
pub fn shade<T: Real>(
    material: &MaterialSpec,
    normal: &Vector3<T>,
    view_dir: &Vector3<T>,
    light_dir: &Vector3<T>,
) -> Vector3<T> {
    let mut color = Vector3::new(
        T::c(material.albedo[0]),
        T::c(material.albedo[1]),
        T::c(material.albedo[2]),
    );
    if material.specular_strength > 0.0 {
        // reflect(L) = 2(n·L)n − L; lobe against the direction to the eye.
        let l = light_dir;
        let r = normal * (T::c(2.0) * normal.dot(l)) - l;
        let spec = r.dot(&(-view_dir)).max(T::zero());
        let lobe = T::c(material.specular_strength) * spec.powf(T::c(material.specular_exponent));
        color += Vector3::from_element(lobe);
    }
    Vector3::new(
        color.x.max(T::zero()).min(T::one()),
        color.y.max(T::zero()).min(T::one()),
        color.z.max(T::zero()).min(T::one()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn sphere_sdf_and_gradient() {
        let s = ShapeSpec::Sphere {
            center: [0.0, 0.0, 0.0],
            radius: 0.5,
        };
        assert_relative_eq!(s.sdf(&Vector3::new(1.0, 0.0, 0.0)), 0.5);
        assert_relative_eq!(s.sdf(&Vector3::<f64>::zeros()), -0.5);
        let g = s.gradient(&Vector3::new(0.3, 0.4, 0.0));
        assert_relative_eq!(g.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(g.x, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn box_sdf_matches_finite_differences() {
        let s = ShapeSpec::Cuboid {
            center: [0.1, -0.2, 0.0],
            half_extents: [0.3, 0.2, 0.4],
        };
        let mut rng = crate::scene::testgen::rng(11);
        let h = 1e-6;
        for _ in 0..200 {
            let p = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0f64),
            );
            if s.sdf(&p).abs() < 1e-3 {
                continue; // keep away from the surface kinks
            }
            let g = s.gradient(&p);
            for a in 0..3 {
                let mut pp = p;
                pp[a] += h;
                let mut pm = p;
                pm[a] -= h;
                let fd = (s.sdf(&pp) - s.sdf(&pm)) / (2.0 * h);
                assert!((g[a] - fd).abs() < 1e-4, "{p:?} axis {a}: {} vs {fd}", g[a]);
            }
            if s.sdf(&p) > 0.0 {
                assert_relative_eq!(g.norm(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn union_picks_closest() {
        let shapes = vec![
            SceneShape {
                shape: ShapeSpec::Sphere {
                    center: [0.0, 0.0, 0.0],
                    radius: 0.3,
                },
                material: MaterialSpec::default(),
            },
            SceneShape {
                shape: ShapeSpec::Sphere {
                    center: [1.0, 0.0, 0.0],
                    radius: 0.3,
                },
                material: MaterialSpec::default(),
            },
        ];
        let (d, who) = union_sdf(&shapes, &Vector3::new(0.9, 0.0, 0.0));
        assert_eq!(who, 1);
        assert_relative_eq!(d, -0.2, epsilon = 1e-12);
    }

    #[test]
    fn lambertian_shade_is_view_independent() {
        let m = MaterialSpec {
            albedo: [0.2, 0.5, 0.7],
            specular_strength: 0.0,
            specular_exponent: 64.0,
        };
        let n = Vector3::new(0.0, 0.0, 1.0);
        let l = Vector3::new(0.0, 0.0, 1.0f64);
        for v in [
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(0.6, 0.0, -0.8),
        ] {
            let c = shade(&m, &n, &v, &l);
            assert_relative_eq!(c.x, 0.2);
            assert_relative_eq!(c.y, 0.5);
            assert_relative_eq!(c.z, 0.7);
        }
    }

    #[test]
    fn specular_shade_varies_with_view() {
        let m = MaterialSpec {
            albedo: [0.2, 0.2, 0.2],
            specular_strength: 0.8,
            specular_exponent: 64.0,
        };
        let n = Vector3::new(0.0, 0.0, 1.0);
        let l = Vector3::new(0.0, 0.0, 1.0f64);
        // Mirror view: reflection lines up with the eye.
        let aligned = shade(&m, &n, &Vector3::new(0.0, 0.0, -1.0), &l);
        let grazing = shade(&m, &n, &Vector3::new(0.9, 0.0, -0.435889894354f64).normalize(), &l);
        assert!(aligned.x > grazing.x + 0.5);
    }
}
