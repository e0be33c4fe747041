//! The single structured config file driving every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::manage::ManagementConfig;
use crate::scene::SceneSpec;

use super::schedule::StagePlan;

/// Per-group learning rates (splatting-convention defaults; the position
/// rate is additionally scaled by the scene extent and decays
/// exponentially to `position_final_mult` of its start over the run).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub position_final_mult: f64,
    pub sh: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub confidence: f64,
    pub sdf_grid: f64,
    pub sharpness: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final_mult: 0.01,
            sh: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            confidence: 1e-2,
            sdf_grid: 1e-2,
            sharpness: 1e-3,
        }
    }
}

impl LearningRates {
    /// Exponentially decayed position rate at `it` of `total` iterations.
    pub fn position_at(&self, it: usize, total: usize, extent: f64) -> f64 {
        let t = if total <= 1 {
            1.0
        } else {
            (it as f64 / (total - 1) as f64).clamp(0.0, 1.0)
        };
        self.position * extent * self.position_final_mult.powf(t)
    }
}

/// Volume-branch training knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SdfTrainConfig {
    pub resolution: usize,
    pub rays_per_iter: usize,
    pub eikonal_points_per_iter: usize,
    pub lambda_eik: f64,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub guide_band: f64,
    pub product_transmittance: bool,
    pub raw_entropy: bool,
}

impl Default for SdfTrainConfig {
    fn default() -> Self {
        SdfTrainConfig {
            resolution: 64,
            rays_per_iter: 512,
            eikonal_points_per_iter: 256,
            lambda_eik: 0.1,
            n_coarse: 32,
            n_fine: 16,
            guide_band: 0.1,
            product_transmittance: false,
            raw_entropy: false,
        }
    }
}

/// Everything a run needs, in one nested TOML document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub threads: usize,
    pub init_surfels: usize,
    /// Disable for the "w/o Conf." ablation: no adaptive loss weighting,
    /// no per-surfel confidence supervision in stages 1 and 3, and stage 3
    /// keeps the N_c prior instead of the confidence-weighted F_v ⊙ N_v
    /// distillation.
    pub confidence_mechanism: bool,
    pub scene: SceneSpec,
    pub plan: StagePlan,
    pub loss: LossWeights<f64>,
    pub manage: ManagementConfig<f64>,
    pub rates: LearningRates,
    pub sdf: SdfTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            threads: 0, // 0 = library default
            init_surfels: 5000,
            confidence_mechanism: true,
            scene: SceneSpec::default(),
            plan: StagePlan::default(),
            loss: LossWeights::default(),
            manage: ManagementConfig::default(),
            rates: LearningRates::default(),
            sdf: SdfTrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Canonical dump of every constant, the audit surface for the
    /// schedule golden file.
    pub fn dump(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.scene
            .validate()
            .map_err(|e| Error::Config(format!("scene: {e}")))?;
        if self.init_surfels == 0 {
            return Err(Error::Config("init_surfels must be positive".into()));
        }
        if self.sdf.resolution < 4 || self.sdf.resolution % 2 != 0 {
            return Err(Error::Config("sdf resolution must be even and at least 4".into()));
        }
        if self.sdf.rays_per_iter == 0 || self.sdf.n_coarse < 2 {
            return Err(Error::Config("sdf ray budget too small".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let config = TrainConfig::default();
        let mut with_shape = config.clone();
        with_shape.scene.shapes.push(crate::scene::shapes::SceneShape {
            shape: crate::scene::shapes::ShapeSpec::Sphere {
                center: [0.0; 3],
                radius: 0.5,
            },
            material: Default::default(),
        });
        let text = with_shape.dump();
        let back = TrainConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, with_shape);
    }

    #[test]
    fn unknown_keys_are_rejected_before_any_compute() {
        let err = TrainConfig::from_toml_str("sede = 3").unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }

    #[test]
    fn position_rate_decays_to_the_final_multiplier() {
        let rates = LearningRates::default();
        let start = rates.position_at(0, 1000, 2.0);
        let end = rates.position_at(999, 1000, 2.0);
        assert!((start - 1.6e-4 * 2.0).abs() < 1e-12);
        assert!((end - start * 0.01).abs() < 1e-12);
    }
}
