//! Measurements taken during training: per-layer weight-update statistics and
//! their variance bounds, shift traces, weight-variance stability, and a
//! finite-difference gradient checker.
//!
//! Every mean and variance here is a population statistic over nodes (divide
//! by the count), never over data samples.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::network::{BackwardOutput, Cache, LayerParams, Mode, Network, ParamKind, Params, PlannedOp};
use crate::tensor::Tensor;

/// Multiplicative slack used when asserting the variance sandwich.
pub const SANDWICH_SLACK: f64 = 1e-9;
/// Central-difference step of [`grad_check`].
pub const FD_STEP: f64 = 1e-5;
/// Parameters whose perturbation moves an activation input this close to its
/// kink are excluded from the gradient check.
pub const KINK_WINDOW: f64 = 1e-3;
/// Gradient magnitudes below this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Lower and upper bounds on the variance of a single-sample weight update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceBounds {
    pub lower: f64,
    pub upper: f64,
}

impl VarianceBounds {
    pub fn contains(&self, var_dw: f64) -> bool {
        self.lower <= var_dw * (1.0 + SANDWICH_SLACK) && var_dw <= self.upper * (1.0 + SANDWICH_SLACK)
    }
}

/// For `ΔW = −lr·g·zᵀ` with layer input `z` (n nodes) and output gradient `g`
/// (m nodes):
///
/// `lr²·E(g)²·Var(z) ≤ Var(ΔW) ≤ 2·lr²·(Var(g)·E(z)² + Var(z)·Var(g) + Var(z)·E(g)²)`.
pub fn variance_bounds(z: &[f64], g: &[f64], lr: f64) -> Result<VarianceBounds> {
    if z.is_empty() || g.is_empty() {
        return Err(Error::Contract("variance bounds need non-empty z and g".into()));
    }
    let (mz, vz) = (mean(z), variance(z));
    let (mg, vg) = (mean(g), variance(g));
    let lr2 = lr * lr;
    Ok(VarianceBounds {
        lower: lr2 * mg * mg * vz,
        upper: 2.0 * lr2 * (vg * mz * mz + vz * vg + vz * mg * mg),
    })
}

/// Statistics of one layer at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerStats {
    pub layer_index: usize,
    pub step: usize,
    pub mean_z: f64,
    pub var_z: f64,
    pub mean_g: f64,
    pub var_g: f64,
    pub var_dw: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub weight_var: f64,
}

impl LayerStats {
    /// Builds the record from the realized update `delta_w` (m×n entries).
    pub fn from_update(
        layer_index: usize,
        step: usize,
        z: &[f64],
        g: &[f64],
        delta_w: &[f64],
        lr: f64,
        weight: &[f64],
    ) -> Result<Self> {
        if delta_w.is_empty() || weight.is_empty() {
            return Err(Error::Contract("empty weight update".into()));
        }
        let b = variance_bounds(z, g, lr)?;
        Ok(Self {
            layer_index,
            step,
            mean_z: mean(z),
            var_z: variance(z),
            mean_g: mean(g),
            var_g: variance(g),
            var_dw: variance(delta_w),
            lower_bound: b.lower,
            upper_bound: b.upper,
            weight_var: variance(weight),
        })
    }

    pub fn sandwich_holds(&self) -> bool {
        VarianceBounds { lower: self.lower_bound, upper: self.upper_bound }.contains(self.var_dw)
    }
}

/// Result of [`sandwich_check`]: one record per weighted layer. Only dense
/// layers are asserted; conv layers are recorded for comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub dense: Vec<LayerStats>,
    pub conv: Vec<LayerStats>,
}

/// Takes one plain SGD step of rate `lr` on a single sample (on a copy of the
/// parameters) and checks the realized update variance of every dense layer
/// against [`variance_bounds`].
///
/// The bounds rest on `ΔW` being the rank-1 product of one sample's output
/// gradient and input, so a batch of more than one sample is rejected.
pub fn sandwich_check(
    net: &Network,
    params: &Params,
    sample: &Tensor,
    label: usize,
    lr: f64,
    step: usize,
) -> Result<SandwichReport> {
    let n = sample.shape().first().copied().unwrap_or(0);
    if n != 1 {
        return Err(Error::Regime(format!(
            "sandwich check needs a single-sample batch, got {n}"
        )));
    }
    let mut probe = params.clone();
    let out = net.forward(&mut probe, sample, &[label], Mode::Eval)?;
    let back = net.backward(&probe, &out.cache)?;
    let mut report = SandwichReport { dense: Vec::new(), conv: Vec::new() };
    for (i, plan) in net.plans().iter().enumerate() {
        let is_dense = match plan.op {
            PlannedOp::Dense { .. } => true,
            PlannedOp::Conv { .. } => false,
            _ => continue,
        };
        let w = params.layers[i].weight().expect("weighted layer");
        let gw = back.grads.get(i, ParamKind::Weight).expect("weight gradient");
        let delta: Vec<f64> = gw.data().iter().map(|&g| -lr * g).collect();
        let z = out.cache.layer_input(i).data();
        let g = back.output_grads[i].as_ref().expect("output gradient").data();
        let stats = LayerStats::from_update(i, step, z, g, &delta, lr, w.data())?;
        if is_dense {
            if !stats.sandwich_holds() {
                return Err(Error::BoundViolation {
                    layer: i,
                    lower: stats.lower_bound,
                    var_dw: stats.var_dw,
                    upper: stats.upper_bound,
                });
            }
            report.dense.push(stats);
        } else {
            report.conv.push(stats);
        }
    }
    Ok(report)
}

/// Per-layer weight variance at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVarianceTrace {
    pub step: usize,
    pub layers: Vec<(usize, f64)>,
    pub stability_score: f64,
}

/// Standard deviation across layers of `ln(weight variance)`; layers with zero
/// variance have no logarithm and are left out.
pub fn stability_score(variances: &[f64]) -> f64 {
    let logs: Vec<f64> = variances
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| libm::log(v))
        .collect();
    if logs.is_empty() {
        return 0.0;
    }
    libm::sqrt(variance(&logs))
}

pub fn weight_variance_trace(params: &Params, step: usize) -> WeightVarianceTrace {
    let layers: Vec<(usize, f64)> = params.weights().map(|(i, w)| (i, variance(w.data()))).collect();
    let vars: Vec<f64> = layers.iter().map(|&(_, v)| v).collect();
    WeightVarianceTrace {
        step,
        stability_score: stability_score(&vars),
        layers,
    }
}

/// Summary of one NG layer's shift values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTrace {
    pub layer_index: usize,
    pub epoch: usize,
    pub t_mean: f64,
    pub t_std: f64,
    pub t_min: f64,
    pub t_max: f64,
}

pub fn t_traces(params: &Params, epoch: usize) -> Vec<TTrace> {
    params
        .ng_layers()
        .map(|(i, ng)| {
            let t = ng.t.data();
            TTrace {
                layer_index: i,
                epoch,
                t_mean: mean(t),
                t_std: libm::sqrt(variance(t)),
                t_min: t.iter().copied().fold(f64::INFINITY, f64::min),
                t_max: t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Mean of a weighted layer's input and of its output gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShift {
    pub layer_index: usize,
    pub mean_z: f64,
    pub mean_g: f64,
}

/// `E(Z)` and `E(∂ε/∂S)` over all nodes and samples for every dense/conv layer.
pub fn mean_shift_trace(cache: &Cache, backward: &BackwardOutput) -> Vec<MeanShift> {
    backward
        .output_grads
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            g.as_ref().map(|g| MeanShift {
                layer_index: i,
                mean_z: mean(cache.layer_input(i).data()),
                mean_g: mean(g.data()),
            })
        })
        .collect()
}

/// Gradient-check outcome for one parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Parameters skipped because their perturbation touches a kink.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Keyed by group name: `weights`, `biases`, `bn`, `prelu_a`, `ng_t`.
    pub groups: BTreeMap<&'static str, GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.values().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.groups.values().map(|g| g.max_abs_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance && self.groups.values().all(|g| g.checked > 0)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Pre-shift activation inputs `x − t` of every kinked activation layer.
fn kink_offsets(net: &Network, params: &Params, cache: &Cache) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (i, plan) in net.plans().iter().enumerate() {
        let PlannedOp::Activation(act) = plan.op else { continue };
        if act.base == crate::activations::BaseActivation::Identity {
            continue;
        }
        let x = cache.layer_input(i);
        let per: usize = plan.input.iter().product();
        let spatial = per / plan.input[0];
        let ng = match &params.layers[i] {
            LayerParams::Activation { ng, .. } => ng.as_ref(),
            _ => None,
        };
        let offsets = x
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let e = k % per;
                let t = ng.map_or(0.0, |ng| {
                    let t = ng.t.data();
                    match ng.granularity {
                        crate::activations::Granularity::ElementWise => t[e],
                        crate::activations::Granularity::ChannelWise => t[e / spatial],
                        crate::activations::Granularity::LayerWise => t[0],
                    }
                });
                v - t
            })
            .collect();
        out.push(offsets);
    }
    out
}

/// Compares every analytic gradient with central differences of step
/// [`FD_STEP`]. Train mode is used so BN sees batch statistics; running
/// statistics are only updated on scratch copies.
pub fn grad_check(net: &Network, params: &Params, batch: &Tensor, labels: &[usize], tolerance: f64) -> Result<GradCheckReport> {
    let mut base = params.clone();
    let out = net.forward(&mut base, batch, labels, Mode::Train)?;
    let analytic = net.backward(&base, &out.cache)?.grads;

    let eval = |p: &Params| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut scratch = p.clone();
        let o = net.forward(&mut scratch, batch, labels, Mode::Train)?;
        let k = kink_offsets(net, p, &o.cache);
        Ok((o.loss, k))
    };

    let mut groups: BTreeMap<&'static str, GroupReport> = BTreeMap::new();
    for (layer, lg) in analytic.layers.iter().enumerate() {
        let trainable: Vec<bool> = params.layers[layer].tensors().iter().map(|t| t.2).collect();
        for (slot_idx, (kind, grad)) in lg.iter().enumerate() {
            if !trainable[slot_idx] {
                continue;
            }
            let entry = groups.entry(kind.group()).or_default();
            for j in 0..grad.len() {
                let mut plus = params.clone();
                plus.layers[layer].slots_mut()[slot_idx].value.data_mut()[j] += FD_STEP;
                let mut minus = params.clone();
                minus.layers[layer].slots_mut()[slot_idx].value.data_mut()[j] -= FD_STEP;
                let (lp, kp) = eval(&plus)?;
                let (lm, km) = eval(&minus)?;
                let near_kink = kp.iter().zip(&km).any(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .any(|(&u, &v)| u != v && (u.abs() < KINK_WINDOW || v.abs() < KINK_WINDOW || u.signum() != v.signum()))
                });
                if near_kink {
                    entry.excluded += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * FD_STEP);
                let err = relative_error(grad.data()[j], numeric);
                entry.max_rel_error = entry.max_rel_error.max(err);
                entry.max_abs_error = entry.max_abs_error.max((grad.data()[j] - numeric).abs());
                entry.checked += 1;
            }
        }
    }
    Ok(GradCheckReport { groups, tolerance })
}
