//! Flattened anisotropic Gaussian primitives.

use nalgebra::{Matrix3, Vector2, Vector3, Vector4};

use crate::geometry::sh;
use crate::scalar::{sigmoid, Real};

/// Which rendering passes a surfel participates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Task {
    /// Both color and normal passes.
    Common,
    /// Color/depth pass only.
    ColorOnly,
    /// Normal pass only.
    NormalOnly,
}

impl Task {
    pub fn in_color_pass(self) -> bool {
        matches!(self, Task::Common | Task::ColorOnly)
    }
    pub fn in_normal_pass(self) -> bool {
        matches!(self, Task::Common | Task::NormalOnly)
    }
    pub fn tag(self) -> u8 {
        match self {
            Task::Common => 0,
            Task::ColorOnly => 1,
            Task::NormalOnly => 2,
        }
    }
    pub fn from_tag(tag: u8) -> Option<Task> {
        match tag {
            0 => Some(Task::Common),
            1 => Some(Task::ColorOnly),
            2 => Some(Task::NormalOnly),
            _ => None,
        }
    }
}

/// A flattened Gaussian: the third scale axis is identically zero and its
/// direction (third rotation column) is the surfel normal.
///
/// Opacity and confidence are stored as logits; scales are stored in log
/// space so positivity survives unconstrained optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Surfel<T: Real> {
    pub center: Vector3<T>,
    /// Unit quaternion (w, x, y, z).
    pub rotation: Vector4<T>,
    pub log_scale: Vector2<T>,
    pub opacity_logit: T,
    pub confidence_logit: T,
    /// One rgb triple per basis function; length = (order+1)^2.
    pub sh: Vec<Vector3<T>>,
    pub order: usize,
    pub task: Task,
}

impl<T: Real> Surfel<T> {
    pub fn scale(&self) -> Vector2<T> {
        self.log_scale.map(|v| v.exp())
    }

    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn confidence(&self) -> T {
        sigmoid(self.confidence_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        quat_to_matrix(&self.rotation)
    }

    /// Surfel normal: third column of the rotation matrix.
    pub fn normal(&self) -> Vector3<T> {
        self.rotation_matrix().column(2).into()
    }

    /// Rank-2 world-space covariance R S S^T R^T with the third scale zero.
    pub fn covariance(&self) -> Matrix3<T> {
        let r = self.rotation_matrix();
        let s = self.scale();
        let c0: Vector3<T> = r.column(0).into();
        let c1: Vector3<T> = r.column(1).into();
        c0 * c0.transpose() * (s.x * s.x) + c1 * c1.transpose() * (s.y * s.y)
    }

    pub fn renormalize_rotation(&mut self) {
        let n = self.rotation.norm();
        if n > T::zero() {
            self.rotation /= n;
        } else {
            self.rotation = Vector4::new(T::one(), T::zero(), T::zero(), T::zero());
        }
    }

    /// Grow the SH order by one, appending zero coefficients so the rendered
    /// output is unchanged at the instant of growth.
    pub fn promote_order(&mut self) {
        if self.order < sh::MAX_ORDER {
            self.order += 1;
            self.sh
                .resize(sh::sh_basis_count(self.order), Vector3::zeros());
        }
    }

    /// Scalar parameter count: 11 basic attributes plus the SH payload.
    pub fn scalar_count(&self) -> usize {
        11 + 3 * self.sh.len()
    }
}

/// Rotation matrix of a (not necessarily unit) quaternion; the quaternion is
/// normalized internally.
pub fn quat_to_matrix<T: Real>(q: &Vector4<T>) -> Matrix3<T> {
    let n = q.norm();
    let q = q / n;
    let (w, x, y, z) = (q.x, q.y, q.z, q.w);
    let two = T::c(2.0);
    let one = T::one();
    Matrix3::new(
        one - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        one - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        one - two * (x * x + y * y),
    )
}

/// Reverse pass of [`quat_to_matrix`]: maps an adjoint of the rotation matrix
/// back to the raw (unnormalized) quaternion, including the normalization
/// Jacobian.
pub fn quat_to_matrix_backward<T: Real>(q_raw: &Vector4<T>, r_bar: &Matrix3<T>) -> Vector4<T> {
    let n = q_raw.norm();
    let q = q_raw / n;
    let (w, x, y, z) = (q.x, q.y, q.z, q.w);
    let two = T::c(2.0);
    let zero = T::zero();
    // dR/dw etc. for the unit quaternion.
    let dw = Matrix3::new(zero, -z, y, z, zero, -x, -y, x, zero) * two;
    let dx = Matrix3::new(zero, y, z, y, -two * x, -w, z, w, -two * x) * two;
    let dy = Matrix3::new(-two * y, x, w, x, zero, z, -w, z, -two * y) * two;
    let dz = Matrix3::new(-two * z, -w, x, w, -two * z, y, x, y, zero) * two;
    let g_unit = Vector4::new(
        r_bar.dot(&dw),
        r_bar.dot(&dx),
        r_bar.dot(&dy),
        r_bar.dot(&dz),
    );
    // Chain through q = q_raw / |q_raw|.
    (g_unit - q * q.dot(&g_unit)) / n
}

/// Adjoint of [`Surfel::covariance`] with respect to rotation matrix and
/// scales. `sigma_bar` need not be symmetric; it is symmetrized internally.
pub fn covariance_backward<T: Real>(
    rotation: &Matrix3<T>,
    scale: &Vector2<T>,
    sigma_bar: &Matrix3<T>,
) -> (Matrix3<T>, Vector2<T>) {
    let half = T::c(0.5);
    let sym = (sigma_bar + sigma_bar.transpose()) * half;
    let c0: Vector3<T> = rotation.column(0).into();
    let c1: Vector3<T> = rotation.column(1).into();
    let two = T::c(2.0);
    let mut r_bar = Matrix3::zeros();
    r_bar.set_column(0, &(sym * c0 * (two * scale.x * scale.x)));
    r_bar.set_column(1, &(sym * c1 * (two * scale.y * scale.y)));
    let s_bar = Vector2::new(
        two * scale.x * (c0.transpose() * sym * c0)[0],
        two * scale.y * (c1.transpose() * sym * c1)[0],
    );
    (r_bar, s_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::logit;
    use approx::assert_relative_eq;

    fn unit_surfel(rotation: Vector4<f64>, s: (f64, f64)) -> Surfel<f64> {
        Surfel {
            center: Vector3::zeros(),
            rotation: rotation.normalize(),
            log_scale: Vector2::new(s.0.ln(), s.1.ln()),
            opacity_logit: logit(0.5),
            confidence_logit: logit(0.5),
            sh: vec![Vector3::zeros()],
            order: 0,
            task: Task::Common,
        }
    }

    #[test]
    fn identity_covariance() {
        let s = unit_surfel(Vector4::new(1.0, 0.0, 0.0, 0.0), (1.0, 1.0));
        let cov = s.covariance();
        assert_relative_eq!(
            cov,
            Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)),
            epsilon = 1e-12
        );
        let s = unit_surfel(Vector4::new(1.0, 0.0, 0.0, 0.0), (2.0, 3.0));
        assert_relative_eq!(
            s.covariance(),
            Matrix3::from_diagonal(&Vector3::new(4.0, 9.0, 0.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn normal_spans_null_space() {
        let q = Vector4::new(0.4, -0.3, 0.7, 0.5);
        let s = unit_surfel(q, (1.7, 0.4));
        let n = s.normal();
        assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!((s.covariance() * n).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_and_x_rotation_normals() {
        let s = unit_surfel(Vector4::new(1.0, 0.0, 0.0, 0.0), (1.0, 1.0));
        assert_relative_eq!(s.normal(), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        // 90 degrees about x: (cos45, sin45, 0, 0).
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = unit_surfel(Vector4::new(h, h, 0.0, 0.0), (1.0, 1.0));
        assert_relative_eq!(s.normal(), Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let q = Vector4::new(0.9, 0.1, -0.2, 0.33);
        let s = unit_surfel(q, (0.8, 2.5));
        let mut eig: Vec<f64> = s.covariance().symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(eig[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(eig[1], 0.64, epsilon = 1e-9);
        assert_relative_eq!(eig[2], 6.25, epsilon = 1e-9);
    }

    #[test]
    fn quat_backward_matches_finite_differences() {
        let q = Vector4::new(0.7, -0.4, 0.2, 0.5);
        // Scalar functional: weighted sum of matrix entries.
        let wts = Matrix3::new(0.3, -1.2, 0.7, 0.1, 0.9, -0.5, 0.25, 0.6, -0.8);
        let grad = quat_to_matrix_backward(&q, &wts);
        let h = 1e-6;
        for i in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fp = quat_to_matrix(&qp).dot(&wts);
            let fm = quat_to_matrix(&qm).dot(&wts);
            assert_relative_eq!(grad[i], (fp - fm) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn covariance_backward_matches_finite_differences() {
        let q = Vector4::new(0.2, 0.8, -0.1, 0.4).normalize();
        let scale = Vector2::new(1.3, 0.6);
        let rot = quat_to_matrix(&q);
        let wts = Matrix3::new(1.0, 0.2, -0.3, 0.2, -0.7, 0.5, -0.3, 0.5, 0.9);
        let (r_bar, s_bar) = covariance_backward(&rot, &scale, &wts);
        let f = |r: &Matrix3<f64>, s: &Vector2<f64>| {
            let c0: Vector3<f64> = r.column(0).into();
            let c1: Vector3<f64> = r.column(1).into();
            let cov = c0 * c0.transpose() * (s.x * s.x) + c1 * c1.transpose() * (s.y * s.y);
            cov.dot(&wts)
        };
        let h = 1e-6;
        for i in 0..2 {
            let mut sp = scale;
            let mut sm = scale;
            sp[i] += h;
            sm[i] -= h;
            assert_relative_eq!(s_bar[i], (f(&rot, &sp) - f(&rot, &sm)) / (2.0 * h), epsilon = 1e-6);
        }
        for r in 0..3 {
            for c in 0..2 {
                let mut rp = rot;
                let mut rm = rot;
                rp[(r, c)] += h;
                rm[(r, c)] -= h;
                assert_relative_eq!(
                    r_bar[(r, c)],
                    (f(&rp, &scale) - f(&rm, &scale)) / (2.0 * h),
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn promote_appends_zeros() {
        let mut s = unit_surfel(Vector4::new(1.0, 0.0, 0.0, 0.0), (1.0, 1.0));
        s.sh[0] = Vector3::new(0.3, 0.2, 0.1);
        s.promote_order();
        assert_eq!(s.order, 1);
        assert_eq!(s.sh.len(), 4);
        assert_eq!(s.sh[1], Vector3::zeros());
        assert_eq!(s.scalar_count(), 11 + 12);
    }
}
