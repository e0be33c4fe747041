//! Stage lengths, management windows and the λ_n/λ_s weight schedules.
//! Defaults are the published constants; `scale` shrinks every iteration
//! count uniformly so the full schedule logic runs at desk scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StagePlan {
    /// Uniform multiplier on every iteration constant (0.1 = desk scale).
    pub scale: f64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub stage3_iters: usize,
    pub manage_iters: usize,
    /// Densification window [start, end) within the management run.
    pub densify_start: usize,
    pub densify_end: usize,
    /// Separate-transform window [start, end).
    pub separate_start: usize,
    pub separate_end: usize,
    /// Prune window [start, end).
    pub prune_start: usize,
    pub prune_end: usize,
    /// Management cadence.
    pub t_h: usize,
    /// Normal-supervision switch iteration (equals the stage-1 length).
    pub t_i: usize,
    pub stage1_lambda_n_start: f64,
    pub stage1_lambda_n_end: f64,
    pub stage1_lambda_s_start: f64,
    pub stage1_lambda_s_end: f64,
    pub stage3_lambda_n: f64,
    pub stage3_lambda_s: f64,
    pub manage_lambda_n_early: f64,
    pub manage_lambda_n_late: f64,
    /// λ_n rises to the late value after this many management iterations.
    pub manage_lambda_n_switch: usize,
    pub manage_lambda_s: f64,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            scale: 1.0,
            stage1_iters: 15000,
            stage2_iters: 30000,
            stage3_iters: 15000,
            manage_iters: 15000,
            densify_start: 5000,
            densify_end: 15000,
            separate_start: 5000,
            separate_end: 10000,
            prune_start: 10000,
            prune_end: 15000,
            t_h: 750,
            t_i: 15000,
            stage1_lambda_n_start: 0.04,
            stage1_lambda_n_end: 0.02,
            stage1_lambda_s_start: 0.01,
            stage1_lambda_s_end: 0.11,
            stage3_lambda_n: 0.5,
            stage3_lambda_s: 1.0,
            manage_lambda_n_early: 0.04,
            manage_lambda_n_late: 1.0,
            manage_lambda_n_switch: 5000,
            manage_lambda_s: 1.0,
        }
    }
}

impl StagePlan {
    fn scaled(&self, iters: usize) -> usize {
        ((iters as f64 * self.scale).round() as usize).max(1)
    }

    pub fn s1_iters(&self) -> usize {
        self.scaled(self.stage1_iters)
    }
    pub fn s2_iters(&self) -> usize {
        self.scaled(self.stage2_iters)
    }
    pub fn s3_iters(&self) -> usize {
        self.scaled(self.stage3_iters)
    }
    pub fn m_iters(&self) -> usize {
        self.scaled(self.manage_iters)
    }
    pub fn t_h_scaled(&self) -> usize {
        self.scaled(self.t_h)
    }
    pub fn t_i_scaled(&self) -> usize {
        self.scaled(self.t_i)
    }
    pub fn densify_window(&self) -> (usize, usize) {
        (self.scaled(self.densify_start), self.scaled(self.densify_end))
    }
    pub fn separate_window(&self) -> (usize, usize) {
        (self.scaled(self.separate_start), self.scaled(self.separate_end))
    }
    pub fn prune_window(&self) -> (usize, usize) {
        (self.scaled(self.prune_start), self.scaled(self.prune_end))
    }

    fn linear(&self, start: f64, end: f64, it: usize, n: usize) -> f64 {
        if n <= 1 {
            return end;
        }
        let t = (it as f64 / (n - 1) as f64).clamp(0.0, 1.0);
        start + (end - start) * t
    }

    /// Stage-1 λ_n, decaying linearly over the stage.
    pub fn lambda_n_stage1(&self, it: usize) -> f64 {
        self.linear(self.stage1_lambda_n_start, self.stage1_lambda_n_end, it, self.s1_iters())
    }

    /// Stage-1 λ_s, rising linearly over the stage.
    pub fn lambda_s_stage1(&self, it: usize) -> f64 {
        self.linear(self.stage1_lambda_s_start, self.stage1_lambda_s_end, it, self.s1_iters())
    }

    /// Management λ_n: the early value until the switch, then the late one.
    pub fn lambda_n_manage(&self, it: usize) -> f64 {
        if it < self.scaled(self.manage_lambda_n_switch) {
            self.manage_lambda_n_early
        } else {
            self.manage_lambda_n_late
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale <= 0.0 {
            return Err(Error::Config("plan scale must be positive".into()));
        }
        if self.t_i != self.stage1_iters {
            return Err(Error::Config(format!(
                "t_i ({}) must equal stage1_iters ({})",
                self.t_i, self.stage1_iters
            )));
        }
        for (name, (s, e), run) in [
            ("densify", (self.densify_start, self.densify_end), self.manage_iters),
            ("separate", (self.separate_start, self.separate_end), self.manage_iters),
            ("prune", (self.prune_start, self.prune_end), self.manage_iters),
        ] {
            if s >= e || e > run {
                return Err(Error::Config(format!(
                    "{name} window [{s}, {e}) must sit inside the {run}-iteration run"
                )));
            }
        }
        if self.t_h == 0 {
            return Err(Error::Config("t_h must be positive".into()));
        }
        Ok(())
    }
}
