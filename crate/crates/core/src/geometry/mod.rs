//! Domain types shared by all other modules: surfels, cameras, rendered
//! maps, spherical harmonics and covariance construction.

pub mod camera;
pub mod maps;
pub mod sh;
pub mod surfel;

pub use camera::Camera;
pub use maps::{Buffer2, RenderedMaps, ScalarMap, VectorMap};
pub use sh::{sh_basis_count, sh_coeff_count, sh_eval, sh_eval_raw};
pub use surfel::{Surfel, Task};
