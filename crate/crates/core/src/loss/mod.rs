//! Losses and supervision signals for both branches.

pub mod confidence;
pub mod normal;
pub mod reg;
pub mod ssim;

pub use confidence::{
    color_error_target, confidence_gt, l_conf_surfel, l_conf_volume, l_conf_volume_backward,
};
pub use normal::{
    cosine_loss, cosine_loss_backward, depth_to_normal, depth_to_normal_backward, l_geo,
    l_geo_adaptive, l_geo_adaptive_backward, normal_supervision,
};
pub use reg::{l_curv, l_curv_backward, l_mask, l_mask_backward, l_opac, l_opac_backward};
pub use ssim::{l1, l_rad, l_rad_backward, ssim, ssim_backward};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Fixed loss weights; defaults are the Appendix values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights<T: Real> {
    pub lambda_ssim: T,
    pub lambda_curv: T,
    pub lambda_opac: T,
    /// 0.01 without object masks, 1.0 with them.
    pub lambda_mask: T,
    pub lambda_vol: T,
    pub lambda_conf: T,
    pub lambda_h: T,
    pub zeta_rad: T,
    pub zeta_geo: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            lambda_ssim: T::c(0.2),
            lambda_curv: T::c(0.005),
            lambda_opac: T::c(0.01),
            lambda_mask: T::c(1.0),
            lambda_vol: T::c(0.01),
            lambda_conf: T::c(0.005),
            lambda_h: T::c(0.005),
            zeta_rad: T::c(0.0002),
            zeta_geo: T::c(0.0001),
        }
    }
}

/// Per-iteration loss terms plus the weighted total, one CSV row.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown<T: Real> {
    pub l_rad: T,
    pub l_geo: T,
    pub l_curv: T,
    pub l_opac: T,
    pub l_mask: T,
    pub l_conf_g: T,
    pub l_conf_v: T,
    pub eikonal: T,
    pub total: T,
}

impl<T: Real> LossBreakdown<T> {
    pub const CSV_HEADER: &'static str =
        "iteration,l_rad,l_geo,l_curv,l_opac,l_mask,l_conf_g,l_conf_v,eikonal,total";

    pub fn csv_row(&self, iteration: usize) -> String {
        format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            iteration,
            self.l_rad.f64(),
            self.l_geo.f64(),
            self.l_curv.f64(),
            self.l_opac.f64(),
            self.l_mask.f64(),
            self.l_conf_g.f64(),
            self.l_conf_v.f64(),
            self.eikonal.f64(),
            self.total.f64()
        )
    }

    pub fn all_finite(&self) -> bool {
        [
            self.l_rad, self.l_geo, self.l_curv, self.l_opac, self.l_mask, self.l_conf_g,
            self.l_conf_v, self.eikonal, self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}
