//! Forward and backward passes of the surfel rasterizer: EWA-style
//! projection, per-pixel front-to-back alpha compositing, task-indicator
//! masking for separate rendering, and confidence-map rendering.

pub mod backward;
pub mod forward;
pub mod project;

pub use backward::{backward, MapAdjoints, SurfelGrads};
pub use forward::{render_maps, ForwardRecord, Frag, PassRecord};
pub use project::{pixel_depth, project_surfel, splat_alpha, ProjectedSplat};

use crate::scalar::Real;

/// Which indicator sets each pass composites over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RenderMode {
    /// Every surfel contributes to every map.
    Unified,
    /// Color/depth composite over {Common, ColorOnly}; normals over
    /// {Common, NormalOnly}.
    Separate,
}

/// Rasterizer constants.
#[derive(Debug, Clone, Copy)]
pub struct RenderConfig<T: Real> {
    /// Dilation floor added to the projected covariance diagonal (px^2).
    pub eps_px: T,
    /// Fragments below this alpha are discarded.
    pub alpha_min: T,
    /// Per-splat alpha ceiling.
    pub alpha_clamp: T,
    /// Coverage below this zeroes depth and normal outputs.
    pub coverage_eps: T,
}

impl<T: Real> Default for RenderConfig<T> {
    fn default() -> Self {
        RenderConfig {
            eps_px: T::c(0.3),
            alpha_min: T::c(1.0 / 255.0),
            alpha_clamp: T::c(0.999),
            coverage_eps: T::c(1e-5),
        }
    }
}
