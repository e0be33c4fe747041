//! The volume branch: trainable voxel SDF/radiance/confidence grids with
//! volume rendering, confidence accumulation and ray entropy.

pub mod field;
pub mod render;

pub use field::{eikonal_backward, eikonal_residual, FieldGrads, VoxelSdfField};
pub use render::{
    alpha_from_sdf, alpha_from_sdf_backward, depth_guided_samples, ray_entropy,
    volume_render_backward, volume_render_ray, RayAdjoints, RayOutputs, RayRecord, RaySampleSet,
    SdfRenderConfig,
};
