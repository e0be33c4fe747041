//! Differentiable Gaussian-surfel reconstruction on the CPU.
//!
//! The crate combines a surfel rasterizer with task-decoupled separate
//! rendering, a trainable voxel SDF branch with volume rendering, the loss
//! stack coupling the two through per-primitive and per-ray confidences,
//! and gradient-driven surfel management (clone/split/separate
//! densification, adaptive spherical-harmonic orders, contribution
//! pruning). A synthetic ray-traced scene harness provides ground truth and
//! evaluation metrics, and the `surfelcore` binary ties the stages together.
//!
//! All numerics are generic over the [`scalar::Real`] scalar type; the
//! pipeline and CLI run with [`Fp`].

pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod manage;
pub mod render;
pub mod scalar;
pub mod scene;
pub mod sdf;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default scalar for the training pipeline and CLI.
pub type Fp = f64;

/// Concrete aliases at the default precision.
pub type Surfel = geometry::Surfel<Fp>;
pub type Camera = geometry::Camera<Fp>;
pub type RenderedMaps = geometry::RenderedMaps<Fp>;
