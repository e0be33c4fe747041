//! Artifact serialization: surfel PLY, float maps, PNG previews, the voxel
//! field binary, and run/camera manifests.

pub mod manifest;
pub mod pfm;
pub mod ply;
pub mod png;
pub mod sdf_bin;

pub use manifest::{config_hash, write_camera_manifest, RunManifest};
pub use pfm::{read_pfm_scalar, read_pfm_vector, write_pfm_scalar, write_pfm_vector};
pub use ply::{ply_byte_size, read_surfels_ply, write_points_ply, write_surfels_ply};
pub use png::{write_png_color, write_png_gray, write_png_normal};
pub use sdf_bin::{read_field, write_field};
