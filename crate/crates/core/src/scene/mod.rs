//! Synthetic ground truth, evaluation metrics and the finite-difference
//! gradient oracle.

pub mod fd;
pub mod metrics;
pub mod shapes;
pub mod synth;
pub mod testgen;

pub use fd::{finite_diff_gradient, grads_agree};
pub use synth::{generate_scene, SceneSpec, SyntheticScene, ViewBundle};
