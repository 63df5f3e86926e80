use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::spec::{ActivationSpec, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::kernels::{conv_output_len, ConvGeometry};

/// Strided, zero-channel-padded identity shortcut of a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shortcut {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub stride: usize,
}

impl Shortcut {
    fn between(input: &[usize], output: &[usize]) -> Result<Self> {
        if input == output {
            let (c, h, w) = match *input {
                [c, h, w] => (c, h, w),
                [d] => (d, 1, 1),
                _ => return Err(Error::Config(format!("residual over shape {input:?}"))),
            };
            return Ok(Self { c_in: c, h_in: h, w_in: w, c_out: c, h_out: h, w_out: w, stride: 1 });
        }
        let ([c_in, h_in, w_in], [c_out, h_out, w_out]) = (input, output) else {
            return Err(Error::Config(format!(
                "residual shortcut cannot map {input:?} to {output:?}"
            )));
        };
        let stride = if (h_in, w_in) == (h_out, w_out) { 1 } else { 2 };
        if c_out < c_in
            || conv_output_len(*h_in, stride) != *h_out
            || conv_output_len(*w_in, stride) != *w_out
        {
            return Err(Error::Config(format!(
                "residual shortcut cannot map {input:?} to {output:?}"
            )));
        }
        Ok(Self {
            c_in: *c_in,
            h_in: *h_in,
            w_in: *w_in,
            c_out: *c_out,
            h_out: *h_out,
            w_out: *w_out,
            stride,
        })
    }

    pub(crate) fn add_forward(&self, x: &[f64], out: &mut [f64]) {
        for c in 0..self.c_in {
            for i in 0..self.h_out {
                for j in 0..self.w_out {
                    out[(c * self.h_out + i) * self.w_out + j] +=
                        x[(c * self.h_in + i * self.stride) * self.w_in + j * self.stride];
                }
            }
        }
    }

    pub(crate) fn add_backward(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        for c in 0..self.c_in {
            for i in 0..self.h_out {
                for j in 0..self.w_out {
                    grad_in[(c * self.h_in + i * self.stride) * self.w_in + j * self.stride] +=
                        grad_out[(c * self.h_out + i) * self.w_out + j];
                }
            }
        }
    }
}

/// Shape-resolved form of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannedOp {
    Dense { in_len: usize, units: usize, bias: bool },
    Conv { geometry: ConvGeometry, bias: bool },
    BatchNorm { channels: usize, spatial: usize },
    Activation(ActivationSpec),
    MaxPool { channels: usize, h: usize, w: usize },
    GlobalAvgPool { channels: usize, spatial: usize },
    Loss { classes: usize },
    ResidualStart,
    ResidualEnd { start: usize, shortcut: Shortcut },
}

/// Per-sample input/output shapes of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub op: PlannedOp,
}

pub(crate) fn compile(spec: &NetworkSpec) -> Result<Vec<LayerPlan>> {
    if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
        return Err(Error::Config(format!("invalid input shape {:?}", spec.input_shape)));
    }
    if spec.num_classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    match spec.layers.last() {
        Some(LayerSpec::SoftmaxCrossEntropy) => {}
        _ => return Err(Error::Config("last layer must be SoftmaxCrossEntropy".into())),
    }
    let mut plans = Vec::with_capacity(spec.layers.len());
    let mut shape = spec.input_shape.clone();
    let mut open: Vec<usize> = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let followed_by_bn = spec.layers.get(i + 1) == Some(&LayerSpec::BatchNorm);
        let (op, output) = match *layer {
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::Config(format!("layer {i}: dense with zero units")));
                }
                let in_len = shape.iter().product();
                (PlannedOp::Dense { in_len, units, bias: !followed_by_bn }, vec![units])
            }
            LayerSpec::Conv { channels, stride } => {
                let [c, h, w] = shape[..] else {
                    return Err(Error::Config(format!("layer {i}: conv on non-image shape {shape:?}")));
                };
                let geometry = ConvGeometry::new(c, channels, h, w, stride)
                    .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
                let out = vec![channels, geometry.out_h(), geometry.out_w()];
                (PlannedOp::Conv { geometry, bias: !followed_by_bn }, out)
            }
            LayerSpec::BatchNorm => {
                let channels = shape[0];
                let spatial = shape.iter().product::<usize>() / channels;
                (PlannedOp::BatchNorm { channels, spatial }, shape.clone())
            }
            LayerSpec::Activation(act) => {
                act.base.validate()?;
                (PlannedOp::Activation(act), shape.clone())
            }
            LayerSpec::MaxPool => {
                let [c, h, w] = shape[..] else {
                    return Err(Error::Config(format!("layer {i}: max pool on {shape:?}")));
                };
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Config(format!("layer {i}: max pool on odd {h}x{w}")));
                }
                (PlannedOp::MaxPool { channels: c, h, w }, vec![c, h / 2, w / 2])
            }
            LayerSpec::GlobalAvgPool => {
                let [c, h, w] = shape[..] else {
                    return Err(Error::Config(format!("layer {i}: global pooling on {shape:?}")));
                };
                (PlannedOp::GlobalAvgPool { channels: c, spatial: h * w }, vec![c])
            }
            LayerSpec::SoftmaxCrossEntropy => {
                if i + 1 != spec.layers.len() {
                    return Err(Error::Config("SoftmaxCrossEntropy must be last".into()));
                }
                if shape != [spec.num_classes] {
                    return Err(Error::Config(format!(
                        "classifier produces {shape:?} but there are {} classes",
                        spec.num_classes
                    )));
                }
                (PlannedOp::Loss { classes: spec.num_classes }, shape.clone())
            }
            LayerSpec::ResidualStart => {
                open.push(i);
                (PlannedOp::ResidualStart, shape.clone())
            }
            LayerSpec::ResidualEnd => {
                let start = open
                    .pop()
                    .ok_or_else(|| Error::Config(format!("layer {i}: unmatched residual end")))?;
                let shortcut = Shortcut::between(&plans_input(&plans, start), &shape)
                    .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
                (PlannedOp::ResidualEnd { start, shortcut }, shape.clone())
            }
        };
        plans.push(LayerPlan { input: shape, output: output.clone(), op });
        shape = output;
    }
    if !open.is_empty() {
        return Err(Error::Config(format!("unclosed residual blocks at {open:?}")));
    }
    Ok(plans)
}

fn plans_input(plans: &[LayerPlan], i: usize) -> Vec<usize> {
    plans[i].input.clone()
}
