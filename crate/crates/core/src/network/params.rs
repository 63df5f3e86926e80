use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::plan::{LayerPlan, PlannedOp};
use crate::activations::{NgActivation, DEFAULT_PRELU_SLOPE};
use crate::kernels::KERNEL;
use crate::tensor::Tensor;

/// A trainable tensor and its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub velocity: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let velocity = Tensor::zeros(value.shape());
        Self { value, velocity }
    }
}

/// Role of a trainable tensor; decides weight decay and grad-check grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    PreluSlope,
    NgShift,
}

impl ParamKind {
    pub fn group(&self) -> &'static str {
        match self {
            Self::Weight => "weights",
            Self::Bias => "biases",
            Self::BnScale | Self::BnShift => "bn",
            Self::PreluSlope => "prelu_a",
            Self::NgShift => "ng_t",
        }
    }
}

/// Parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Empty,
    Dense {
        weight: Param,
        bias: Option<Param>,
    },
    Conv {
        kernel: Param,
        bias: Option<Param>,
    },
    BatchNorm {
        scale: Param,
        shift: Param,
        /// Not trained; updated by train-mode forward passes.
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Activation {
        prelu: Option<Param>,
        ng: Option<NgActivation>,
    },
}

/// Mutable view of one trainable tensor.
#[derive(Debug)]
pub struct ParamSlot<'a> {
    pub kind: ParamKind,
    pub value: &'a mut Tensor,
    pub velocity: &'a mut Tensor,
    pub trainable: bool,
}

impl LayerParams {
    /// Trainable tensors in canonical order: weight/kernel, bias, BN scale,
    /// BN shift, PReLU slope, NG shift. `Grads` uses the same order.
    pub fn tensors(&self) -> Vec<(ParamKind, &Tensor, bool)> {
        let mut out = Vec::new();
        match self {
            Self::Empty => {}
            Self::Dense { weight, bias } | Self::Conv { kernel: weight, bias } => {
                out.push((ParamKind::Weight, &weight.value, true));
                if let Some(b) = bias {
                    out.push((ParamKind::Bias, &b.value, true));
                }
            }
            Self::BatchNorm { scale, shift, .. } => {
                out.push((ParamKind::BnScale, &scale.value, true));
                out.push((ParamKind::BnShift, &shift.value, true));
            }
            Self::Activation { prelu, ng } => {
                if let Some(a) = prelu {
                    out.push((ParamKind::PreluSlope, &a.value, true));
                }
                if let Some(ng) = ng {
                    out.push((ParamKind::NgShift, &ng.t, ng.trainable));
                }
            }
        }
        out
    }

    pub fn slots_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::new();
        fn slot(kind: ParamKind, p: &mut Param) -> ParamSlot<'_> {
            ParamSlot {
                kind,
                value: &mut p.value,
                velocity: &mut p.velocity,
                trainable: true,
            }
        }
        match self {
            Self::Empty => {}
            Self::Dense { weight, bias } | Self::Conv { kernel: weight, bias } => {
                out.push(slot(ParamKind::Weight, weight));
                if let Some(b) = bias {
                    out.push(slot(ParamKind::Bias, b));
                }
            }
            Self::BatchNorm { scale, shift, .. } => {
                out.push(slot(ParamKind::BnScale, scale));
                out.push(slot(ParamKind::BnShift, shift));
            }
            Self::Activation { prelu, ng } => {
                if let Some(a) = prelu {
                    out.push(slot(ParamKind::PreluSlope, a));
                }
                if let Some(ng) = ng {
                    out.push(ParamSlot {
                        kind: ParamKind::NgShift,
                        value: &mut ng.t,
                        velocity: &mut ng.t_velocity,
                        trainable: ng.trainable,
                    });
                }
            }
        }
        out
    }

    /// Weight matrix or kernel of a dense/conv layer.
    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Self::Dense { weight, .. } | Self::Conv { kernel: weight, .. } => Some(&weight.value),
            _ => None,
        }
    }

    pub fn ng(&self) -> Option<&NgActivation> {
        match self {
            Self::Activation { ng, .. } => ng.as_ref(),
            _ => None,
        }
    }

    pub fn ng_mut(&mut self) -> Option<&mut NgActivation> {
        match self {
            Self::Activation { ng, .. } => ng.as_mut(),
            _ => None,
        }
    }
}

/// Parameter store for a whole network, indexed by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
    generation: u64,
}

impl Params {
    pub fn from_layers(layers: Vec<LayerParams>) -> Self {
        Self { layers, generation: 0 }
    }

    /// Incremented on every optimizer update; caches remember the value they saw.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Records an in-place change of trainable values, invalidating older caches.
    pub fn mark_modified(&mut self) {
        self.generation += 1;
    }

    pub fn num_trainable(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .filter(|(_, _, trainable)| *trainable)
            .map(|(_, t, _)| t.len())
            .sum()
    }

    /// `(layer index, weight tensor)` for every dense/conv layer.
    pub fn weights(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.weight().map(|w| (i, w)))
    }

    /// `(layer index, NG state)` for every NG activation.
    pub fn ng_layers(&self) -> impl Iterator<Item = (usize, &NgActivation)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.ng().map(|n| (i, n)))
    }
}

/// Weight initialization family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKind {
    /// Gaussian, variance `2 / (fan_in + fan_out)`.
    Xavier,
    /// Gaussian, variance `2 / fan_in`.
    Msra,
    /// Orthonormal factor of a Gaussian matrix.
    Orthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitScheme {
    pub fn new(kind: InitKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

/// `rows × cols` matrix with orthonormal rows (if `rows <= cols`) or columns.
///
/// A Gaussian matrix of shape `max × min` is orthonormalized column by column
/// with two passes of modified Gram-Schmidt; this gives the QR factor whose `R`
/// has a positive diagonal, i.e. the sign-corrected `Q`.
pub fn orthogonal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // column-major: q[c] is column c of the tall matrix
    let raw = gaussian(rng, tall * short, 1.0);
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|c| (0..tall).map(|r| raw[r * short + c]).collect())
        .collect();
    for c in 0..short {
        for _pass in 0..2 {
            for p in 0..c {
                let dot: f64 = q[c].iter().zip(&q[p]).map(|(a, b)| a * b).sum();
                let (done, rest) = q.split_at_mut(c);
                for (v, u) in rest[0].iter_mut().zip(&done[p]) {
                    *v -= dot * u;
                }
            }
        }
        let norm = libm::sqrt(q[c].iter().map(|v| v * v).sum::<f64>());
        q[c].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows >= cols { q[c][r] } else { q[r][c] };
        }
    }
    out
}

fn init_weight(rng: &mut ChaCha8Rng, kind: InitKind, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    match kind {
        InitKind::Xavier => gaussian(rng, rows * cols, libm::sqrt(2.0 / (fan_in + fan_out) as f64)),
        InitKind::Msra => gaussian(rng, rows * cols, libm::sqrt(2.0 / fan_in as f64)),
        InitKind::Orthogonal => orthogonal_matrix(rng, rows, cols),
    }
}

pub(crate) fn init(plans: &[LayerPlan], scheme: InitScheme) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);
    let layers = plans
        .iter()
        .map(|plan| match &plan.op {
            PlannedOp::Dense { in_len, units, bias } => {
                let w = init_weight(&mut rng, scheme.kind, *units, *in_len, *in_len, *units);
                LayerParams::Dense {
                    weight: Param::new(Tensor::new(&[*units, *in_len], w).expect("dense shape")),
                    bias: bias.then(|| Param::new(Tensor::zeros(&[*units]))),
                }
            }
            PlannedOp::Conv { geometry: g, bias } => {
                let taps = KERNEL * KERNEL;
                let w = init_weight(&mut rng, scheme.kind, g.c_out, g.c_in * taps, g.c_in * taps, g.c_out * taps);
                LayerParams::Conv {
                    kernel: Param::new(
                        Tensor::new(&[g.c_out, g.c_in, KERNEL, KERNEL], w).expect("kernel shape"),
                    ),
                    bias: bias.then(|| Param::new(Tensor::zeros(&[g.c_out]))),
                }
            }
            PlannedOp::BatchNorm { channels, .. } => LayerParams::BatchNorm {
                scale: Param::new(Tensor::full(&[*channels], 1.0)),
                shift: Param::new(Tensor::zeros(&[*channels])),
                running_mean: vec![0.0; *channels],
                running_var: vec![1.0; *channels],
            },
            PlannedOp::Activation(act) => LayerParams::Activation {
                prelu: act
                    .base
                    .is_prelu()
                    .then(|| Param::new(Tensor::full(&[plan.input[0]], DEFAULT_PRELU_SLOPE))),
                ng: act.ng.map(|ng| {
                    NgActivation::new(act.base, ng.granularity, &plan.input, ng.t_init, ng.trainable)
                        .expect("validated at compile time")
                }),
            },
            _ => LayerParams::Empty,
        })
        .collect();
    Params::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_square_and_rectangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (r, c) in [(8, 8), (4, 10), (10, 4)] {
            let m = orthogonal_matrix(&mut rng, r, c);
            // Gram matrix of the short side
            let (outer, inner, by_rows) = if r <= c { (r, c, true) } else { (c, r, false) };
            for a in 0..outer {
                for b in 0..outer {
                    let dot: f64 = (0..inner)
                        .map(|k| {
                            if by_rows {
                                m[a * c + k] * m[b * c + k]
                            } else {
                                m[k * c + a] * m[k * c + b]
                            }
                        })
                        .sum();
                    let expected = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-10, "{r}x{c}: ({a},{b}) = {dot}");
                }
            }
        }
    }
}
