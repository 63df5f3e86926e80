//! SGD with momentum and coupled weight decay, the momentum update of the NG
//! shift, and learning-rate schedules.

use alloc::format;
use alloc::vec::Vec;

use crate::activations::NgActivation;
use crate::error::{Error, Result};
use crate::network::{Grads, ParamKind, Params};
use crate::tensor::Tensor;

/// Smallest decrease of the watched metric that counts as an improvement.
pub const PLATEAU_THRESHOLD: f64 = 1e-4;

/// Which per-epoch metric a plateau schedule watches (lower is better).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauMetric {
    TrainLoss,
    TestError,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Multiply by `factor` at each listed epoch (0-based).
    Step { milestones: Vec<usize>, factor: f64 },
    /// Multiply by `factor` after `patience` consecutive epochs without improvement.
    Plateau { patience: usize, factor: f64, metric: PlateauMetric },
}

impl Schedule {
    pub fn constant() -> Self {
        Self::Step { milestones: Vec::new(), factor: 0.1 }
    }

    /// Learning-rate multiplier for `epoch`, given the watched metric of the
    /// epochs completed so far.
    pub fn multiplier(&self, epoch: usize, history: &[f64]) -> f64 {
        match self {
            Self::Step { milestones, factor } => {
                let cuts = milestones.iter().filter(|&&m| m <= epoch).count();
                powi(*factor, cuts)
            }
            Self::Plateau { patience, factor, .. } => plateau_multiplier(history, *patience, *factor),
        }
    }
}

fn powi(base: f64, n: usize) -> f64 {
    (0..n).fold(1.0, |acc, _| acc * base)
}

/// Walks the history: every run of `patience` non-improving epochs cuts the
/// rate once and resets the counter.
fn plateau_multiplier(history: &[f64], patience: usize, factor: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut mult = 1.0;
    for &v in history {
        if v < best - PLATEAU_THRESHOLD {
            best = v;
            stale = 0;
        } else {
            stale += 1;
            if patience > 0 && stale >= patience {
                mult *= factor;
                stale = 0;
            }
        }
    }
    mult
}

/// Multiplier for `schedule` after the given history (the rate for the next epoch).
pub fn schedule_lr(schedule: &Schedule, history: &[f64]) -> f64 {
    schedule.multiplier(history.len(), history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub t_lr: f64,
    pub t_momentum: f64,
    pub schedule: Schedule,
    /// Apply the schedule multiplier to `t_lr` as well.
    pub schedule_t: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            t_lr: 0.01,
            t_momentum: 0.9,
            schedule: Schedule::constant(),
            schedule_t: true,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{what} = {v}")));
        if !(self.lr > 0.0) {
            return bad("lr", self.lr);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum);
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", self.weight_decay);
        }
        if !(self.t_lr >= 0.0) {
            return bad("t_lr", self.t_lr);
        }
        if !(0.0..1.0).contains(&self.t_momentum) {
            return bad("t_momentum", self.t_momentum);
        }
        Ok(())
    }
}

/// Heavy-ball step on one tensor: `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`.
fn heavy_ball(value: &mut Tensor, velocity: &mut Tensor, grad: &Tensor, lr: f64, momentum: f64, decay: f64) {
    for ((w, v), &g) in value.data_mut().iter_mut().zip(velocity.data_mut()).zip(grad.data()) {
        *v = momentum * *v + (g + decay * *w);
        *w -= lr * *v;
    }
}

/// Shift update: `Δt ← μ_t·Δt + γ·∂E/∂t`, then `t ← t − Δt`.
fn shift_update(t: &mut Tensor, dt: &mut Tensor, grad: &Tensor, t_lr: f64, t_momentum: f64) {
    for ((t, d), &g) in t.data_mut().iter_mut().zip(dt.data_mut()).zip(grad.data()) {
        *d = t_momentum * *d + t_lr * g;
        *t -= *d;
    }
}

/// One optimizer step over every trainable tensor. Weight decay only touches
/// dense/conv weights; NG shifts use [`t_step`]'s rule and frozen shifts are
/// skipped. Non-finite gradients abort the step before anything is modified.
pub fn sgd_step(params: &mut Params, grads: &Grads, cfg: &OptimConfig, lr_multiplier: f64) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(Error::Contract("gradients do not match the parameter store".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Divergence("gradient".into()));
    }
    for (i, (layer, lg)) in params.layers.iter().zip(&grads.layers).enumerate() {
        let tensors = layer.tensors();
        if tensors.len() != lg.len()
            || tensors
                .iter()
                .zip(lg)
                .any(|((k, t, _), (gk, g))| k != gk || t.shape() != g.shape())
        {
            return Err(Error::Contract(format!("gradient layout mismatch at layer {i}")));
        }
    }
    let lr = cfg.lr * lr_multiplier;
    let t_lr = if cfg.schedule_t { cfg.t_lr * lr_multiplier } else { cfg.t_lr };
    for (layer, lg) in params.layers.iter_mut().zip(&grads.layers) {
        for (slot, (_, g)) in layer.slots_mut().into_iter().zip(lg) {
            match slot.kind {
                ParamKind::NgShift if slot.trainable => {
                    shift_update(slot.value, slot.velocity, g, t_lr, cfg.t_momentum)
                }
                ParamKind::NgShift => {}
                ParamKind::Weight => heavy_ball(slot.value, slot.velocity, g, lr, cfg.momentum, cfg.weight_decay),
                _ => heavy_ball(slot.value, slot.velocity, g, lr, cfg.momentum, 0.0),
            }
        }
    }
    params.mark_modified();
    Ok(())
}

/// Momentum update of a single NG shift (no weight decay).
pub fn t_step(ng: &mut NgActivation, grad_t: &Tensor, cfg: &OptimConfig, lr_multiplier: f64) -> Result<()> {
    if !ng.trainable {
        return Err(Error::Contract("t_step on a frozen shift".into()));
    }
    if grad_t.shape() != ng.t.shape() {
        return Err(crate::error::shape_err("shift gradient", grad_t.shape(), ng.t.shape()));
    }
    if !grad_t.is_finite() {
        return Err(Error::Divergence("shift gradient".into()));
    }
    let t_lr = if cfg.schedule_t { cfg.t_lr * lr_multiplier } else { cfg.t_lr };
    shift_update(&mut ng.t, &mut ng.t_velocity, grad_t, t_lr, cfg.t_momentum);
    Ok(())
}
