//! Gradient-driven surfel management: the dual-supervision ledger,
//! clone/split/separate densification (Fig. 3), adaptive SH order growth
//! (Eq. 10), and task-decoupled contribution pruning (Eq. 11).

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Surfel, Task};
use crate::render::{ForwardRecord, SurfelGrads};
use crate::scalar::Real;

/// Thresholds and schedule constants for the management run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ManagementConfig<T: Real> {
    /// Densification gate on the mean positional-gradient norm.
    pub tau_g: T,
    /// Surfels with mean scale above this split; below it they clone.
    pub split_scale_threshold: T,
    /// Split children shrink by this factor.
    pub split_scale_divisor: T,
    /// Separate step per unit normalized gradient, in units of mean scale.
    pub separate_step: T,
    /// SH promotion threshold for orders 0→1 and 1→2.
    pub tau_d_low: T,
    /// SH promotion threshold for order 2→3.
    pub tau_d_high: T,
    /// Fraction (percent) of each task set pruned per event.
    pub tau_c_percent: T,
    /// Management cadence in iterations.
    pub t_h: usize,
    /// Surfels below this activated opacity are always pruned.
    pub opacity_floor: T,
    /// Average the Eq. (10) accumulator over the window length instead of
    /// using the raw sum.
    pub sh_gradient_average: bool,
}

impl<T: Real> Default for ManagementConfig<T> {
    fn default() -> Self {
        ManagementConfig {
            tau_g: T::c(0.0002),
            split_scale_threshold: T::c(0.02),
            split_scale_divisor: T::c(1.6),
            separate_step: T::c(0.5),
            tau_d_low: T::c(0.0001),
            tau_d_high: T::c(0.0002),
            tau_c_percent: T::c(10.0),
            t_h: 750,
            opacity_floor: T::c(0.005),
            sh_gradient_average: true,
        }
    }
}

/// Per-surfel gradient and contribution statistics accumulated between
/// management events.
#[derive(Debug, Clone)]
pub struct GradientLedger<T: Real> {
    pub g_rad_sum: Vec<Vector3<T>>,
    pub g_rad_count: Vec<u32>,
    pub g_geo_sum: Vec<Vector3<T>>,
    pub g_geo_count: Vec<u32>,
    /// Σ per-iteration ‖∂L_rad/∂p‖, for Appendix Eq. (2).
    pub rad_pos_norm_sum: Vec<T>,
    /// Σ per-iteration ‖∂L_geo/∂R‖ (quaternion-gradient norm).
    pub geo_rot_norm_sum: Vec<T>,
    /// Eq. (10) accumulator: current-order-band SH gradient norms.
    pub sh_k: Vec<T>,
    pub sh_k_count: Vec<u32>,
    /// Σ per-iteration screen-space gradient norm.
    pub screen_norm_sum: Vec<T>,
    /// Eq. (11) per-view contribution sums, color and normal pass.
    pub color_contrib_sum: Vec<T>,
    pub normal_contrib_sum: Vec<T>,
    pub view_count: u32,
}

impl<T: Real> GradientLedger<T> {
    pub fn new(n: usize) -> Self {
        GradientLedger {
            g_rad_sum: vec![Vector3::zeros(); n],
            g_rad_count: vec![0; n],
            g_geo_sum: vec![Vector3::zeros(); n],
            g_geo_count: vec![0; n],
            rad_pos_norm_sum: vec![T::zero(); n],
            geo_rot_norm_sum: vec![T::zero(); n],
            sh_k: vec![T::zero(); n],
            sh_k_count: vec![0; n],
            screen_norm_sum: vec![T::zero(); n],
            color_contrib_sum: vec![T::zero(); n],
            normal_contrib_sum: vec![T::zero(); n],
            view_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.g_rad_sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_rad_sum.is_empty()
    }

    /// Record one iteration's radiance-loss gradients (position, SH band
    /// norm restricted to the current order, screen norm).
    pub fn record_radiance(&mut self, surfels: &[Surfel<T>], grads: &SurfelGrads<T>) {
        for i in 0..surfels.len() {
            self.g_rad_sum[i] += grads.center[i];
            self.g_rad_count[i] += 1;
            self.rad_pos_norm_sum[i] += grads.center[i].norm();
            self.sh_k[i] += grads.sh_band_norm(i, surfels[i].order);
            self.sh_k_count[i] += 1;
            self.screen_norm_sum[i] += grads.screen[i].norm();
        }
    }

    /// Record one iteration's geometry-loss gradients.
    pub fn record_geometry(&mut self, grads: &SurfelGrads<T>) {
        for i in 0..self.g_geo_sum.len() {
            self.g_geo_sum[i] += grads.center[i];
            self.g_geo_count[i] += 1;
            self.geo_rot_norm_sum[i] += grads.rotation[i].norm();
            self.screen_norm_sum[i] += grads.screen[i].norm();
        }
    }

    /// Record Eq. (11) contributions from one rendered view.
    pub fn record_contributions(&mut self, record: &ForwardRecord<T>) {
        for (si, splat) in record.splats.iter().enumerate() {
            self.color_contrib_sum[splat.source] += record.color_pass.contribution(si);
            self.normal_contrib_sum[splat.source] += record.normal_pass.contribution(si);
        }
        self.view_count += 1;
    }

    pub fn mean_g_rad(&self, i: usize) -> Vector3<T> {
        if self.g_rad_count[i] == 0 {
            Vector3::zeros()
        } else {
            self.g_rad_sum[i] / T::c(self.g_rad_count[i] as f64)
        }
    }

    pub fn mean_g_geo(&self, i: usize) -> Vector3<T> {
        if self.g_geo_count[i] == 0 {
            Vector3::zeros()
        } else {
            self.g_geo_sum[i] / T::c(self.g_geo_count[i] as f64)
        }
    }

    pub fn mean_rad_pos_norm(&self, i: usize) -> T {
        if self.g_rad_count[i] == 0 {
            T::zero()
        } else {
            self.rad_pos_norm_sum[i] / T::c(self.g_rad_count[i] as f64)
        }
    }

    pub fn mean_geo_rot_norm(&self, i: usize) -> T {
        if self.g_geo_count[i] == 0 {
            T::zero()
        } else {
            self.geo_rot_norm_sum[i] / T::c(self.g_geo_count[i] as f64)
        }
    }

    /// Eq. (10) decision statistic.
    pub fn sh_decision_value(&self, i: usize, config: &ManagementConfig<T>) -> T {
        if config.sh_gradient_average && self.sh_k_count[i] > 0 {
            self.sh_k[i] / T::c(self.sh_k_count[i] as f64)
        } else {
            self.sh_k[i]
        }
    }

    /// Eq. (11): mean per-view contribution in the given pass.
    pub fn contribution(&self, i: usize, pass: Task) -> T {
        if self.view_count == 0 {
            return T::zero();
        }
        let sum = match pass {
            Task::NormalOnly => self.normal_contrib_sum[i],
            _ => self.color_contrib_sum[i],
        };
        sum / T::c(self.view_count as f64)
    }

    pub fn reset_sh(&mut self) {
        self.sh_k.iter_mut().for_each(|k| *k = T::zero());
        self.sh_k_count.iter_mut().for_each(|c| *c = 0);
    }
}

/// Outcome of the Fig. 3 decision for one surfel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensifyDecision {
    None,
    Clone,
    Split,
    Separate,
}

/// Fig. 3 as a pure function of the mean gradients and the mean scale.
/// Task-specific surfels never separate (they have one gradient source).
pub fn densify_decision<T: Real>(
    task: Task,
    mean_g_rad: &Vector3<T>,
    mean_g_geo: &Vector3<T>,
    mean_scale: T,
    config: &ManagementConfig<T>,
) -> DensifyDecision {
    let (rad_norm, geo_norm) = match task {
        Task::Common => (mean_g_rad.norm(), mean_g_geo.norm()),
        Task::ColorOnly => (mean_g_rad.norm(), T::zero()),
        Task::NormalOnly => (T::zero(), mean_g_geo.norm()),
    };
    if rad_norm.max(geo_norm) <= config.tau_g {
        return DensifyDecision::None;
    }
    if task == Task::Common && mean_g_rad.dot(mean_g_geo) < T::zero() {
        return DensifyDecision::Separate;
    }
    if mean_scale > config.split_scale_threshold {
        DensifyDecision::Split
    } else {
        DensifyDecision::Clone
    }
}

/// Counts reported by one management event, one JSON line in the event log.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ManagementEvent {
    pub iteration: usize,
    pub cloned: usize,
    pub split: usize,
    pub separated: usize,
    pub promoted: usize,
    pub pruned: usize,
    pub total_surfels: usize,
    pub total_sh_scalars: usize,
}

/// Total serialized SH scalar count of a surfel list.
pub fn total_sh_scalars<T: Real>(surfels: &[Surfel<T>]) -> usize {
    surfels.iter().map(|s| 3 * s.sh.len()).sum()
}

/// One Fig. 3 densification pass. Returns the updated list and the event
/// counts; the caller rebuilds ledger and optimizer state.
pub fn densify_step<T: Real>(
    surfels: &[Surfel<T>],
    ledger: &GradientLedger<T>,
    config: &ManagementConfig<T>,
    separate_enabled: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<Surfel<T>>, ManagementEvent) {
    let mut out = Vec::with_capacity(surfels.len() + 8);
    let mut event = ManagementEvent::default();
    for (i, surfel) in surfels.iter().enumerate() {
        let g_rad = ledger.mean_g_rad(i);
        let g_geo = ledger.mean_g_geo(i);
        let scale = surfel.scale();
        let mean_scale = (scale.x + scale.y) / T::c(2.0);
        let mut decision = densify_decision(surfel.task, &g_rad, &g_geo, mean_scale, config);
        if decision == DensifyDecision::Separate && !separate_enabled {
            decision = DensifyDecision::None;
        }
        match decision {
            DensifyDecision::None => out.push(surfel.clone()),
            DensifyDecision::Clone => {
                // Duplicate; the copy takes one gradient step downhill on
                // its task's combined gradient.
                out.push(surfel.clone());
                let mut child = surfel.clone();
                child.center -= match surfel.task {
                    Task::Common => g_rad + g_geo,
                    Task::ColorOnly => g_rad,
                    Task::NormalOnly => g_geo,
                };
                out.push(child);
                event.cloned += 1;
            }
            DensifyDecision::Split => {
                // Two children sampled inside the parent footprint, scales
                // shrunk; the parent is retired.
                let rot = surfel.rotation_matrix();
                for _ in 0..2 {
                    let mut child = surfel.clone();
                    let u = T::c(rng.gen_range(-1.0..1.0f64));
                    let v = T::c(rng.gen_range(-1.0..1.0f64));
                    let local = Vector3::new(scale.x * u, scale.y * v, T::zero());
                    child.center += rot * local;
                    let shrink = config.split_scale_divisor.ln();
                    child.log_scale -= Vector2::new(shrink, shrink);
                    out.push(child);
                }
                event.split += 1;
            }
            DensifyDecision::Separate => {
                // Contending gradients: one child per task, each stepped
                // along its own descent direction; the parent is retired.
                let rad_norm = g_rad.norm();
                let geo_norm = g_geo.norm();
                let max_norm = rad_norm.max(geo_norm);
                let base_step = config.separate_step * mean_scale;

                let mut color_child = surfel.clone();
                color_child.task = Task::ColorOnly;
                if rad_norm > T::zero() {
                    color_child.center -= g_rad * (base_step / max_norm);
                }

                let mut normal_child = surfel.clone();
                normal_child.task = Task::NormalOnly;
                if geo_norm > T::zero() {
                    normal_child.center -= g_geo * (base_step / max_norm);
                }
                // The color child carries the appearance; the normal child
                // only needs orientation.
                normal_child.sh = vec![Vector3::zeros()];
                normal_child.order = 0;

                out.push(color_child);
                out.push(normal_child);
                event.separated += 1;
            }
        }
    }
    event.total_surfels = out.len();
    event.total_sh_scalars = total_sh_scalars(&out);
    (out, event)
}

/// Eq. (10) adaptive SH order growth; mutates in place and resets the K
/// accumulators. Returns the promotion count.
pub fn adaptive_sh_step<T: Real>(
    surfels: &mut [Surfel<T>],
    ledger: &mut GradientLedger<T>,
    config: &ManagementConfig<T>,
) -> usize {
    let mut promoted = 0;
    for (i, surfel) in surfels.iter_mut().enumerate() {
        if surfel.order >= 3 {
            continue;
        }
        let threshold = if surfel.order < 2 {
            config.tau_d_low
        } else {
            config.tau_d_high
        };
        if ledger.sh_decision_value(i, config) > threshold {
            surfel.promote_order();
            promoted += 1;
        }
    }
    ledger.reset_sh();
    promoted
}

/// Opacity-floor removal followed by per-task contribution pruning
/// (lowest τ_c% of ColorOnly by color-pass contribution, of NormalOnly by
/// normal-pass contribution; Common surfels serve both tasks and are
/// exempt). Returns the survivors and the total removal count.
pub fn prune_step<T: Real>(
    surfels: &[Surfel<T>],
    ledger: &GradientLedger<T>,
    config: &ManagementConfig<T>,
) -> (Vec<Surfel<T>>, usize) {
    let n = surfels.len();
    let mut remove = vec![false; n];
    for (i, s) in surfels.iter().enumerate() {
        if s.opacity() < config.opacity_floor {
            remove[i] = true;
        }
    }
    for task in [Task::ColorOnly, Task::NormalOnly] {
        let mut members: Vec<usize> = (0..n)
            .filter(|&i| surfels[i].task == task && !remove[i])
            .collect();
        let cut = (T::c(members.len() as f64) * config.tau_c_percent / T::c(100.0))
            .floor()
            .f64() as usize;
        if cut == 0 {
            continue;
        }
        members.sort_by(|&a, &b| {
            ledger
                .contribution(a, task)
                .partial_cmp(&ledger.contribution(b, task))
                .unwrap()
                .then(a.cmp(&b))
        });
        for &i in members.iter().take(cut) {
            remove[i] = true;
        }
    }
    let survivors: Vec<Surfel<T>> = surfels
        .iter()
        .zip(&remove)
        .filter(|(_, &r)| !r)
        .map(|(s, _)| s.clone())
        .collect();
    let removed = n - survivors.len();
    (survivors, removed)
}

/// Scalar parameter count the model serializes (Tab. 1 "Size" basis).
pub fn scalar_count<T: Real>(surfels: &[Surfel<T>]) -> usize {
    surfels.iter().map(|s| s.scalar_count()).sum()
}
