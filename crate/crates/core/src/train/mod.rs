//! Staged training loop: splat bootstrap, volume distillation, joint
//! refinement and the management pass, plus the optimizer, schedules,
//! config and checkpoint machinery that drive it.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod schedule;
pub mod trainer;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{LearningRates, SdfTrainConfig, TrainConfig};
pub use schedule::StagePlan;
pub use trainer::{
    field_checksum, init_field_from_depth, init_surfels, scene_bounds, CoreOutputs, FieldOpt,
    SurfelOpt, Trainer,
};
