use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{LayerParams, ParamKind, Params};
use super::plan::PlannedOp;
use super::Network;
use crate::activations::ActivationView;
use crate::error::{Error, Result};
use crate::kernels::{conv_backward_accumulate, conv_forward_into, maxpool_forward_into};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
/// Fraction of the old running statistic kept on each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
enum Aux {
    None,
    MaxPool(Vec<usize>),
    BatchNorm { x_hat: Vec<f64>, inv_std: Vec<f64> },
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    generation: u64,
    mode: Mode,
    labels: Vec<usize>,
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
    probs: Tensor,
}

impl Cache {
    /// Batched input of layer `i` (`Z` for a dense/conv layer).
    pub fn layer_input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }

    pub fn num_layers(&self) -> usize {
        self.inputs.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    /// Softmax probabilities, `[N, classes]`.
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub loss: f64,
    pub cache: Cache,
}

/// Gradients keyed by layer, in the order of [`LayerParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Vec<(ParamKind, Tensor)>>,
}

impl Grads {
    pub fn get(&self, layer: usize, kind: ParamKind) -> Option<&Tensor> {
        self.layers
            .get(layer)?
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, t)| t)
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, _, t)| t.is_finite())
    }

    /// `(layer, kind, gradient)` triples in layer order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, ParamKind, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |(k, t)| (i, *k, t)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOutput {
    pub grads: Grads,
    /// Per-sample `∂ε/∂S` of every dense/conv layer output, `None` elsewhere.
    pub output_grads: Vec<Option<Tensor>>,
}

fn batched(n: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(n);
    s.extend_from_slice(shape);
    s
}

fn layer_mismatch(i: usize) -> Error {
    Error::Contract(format!("parameters of layer {i} do not match the network"))
}

struct RunOutput {
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
    logits: Tensor,
    /// Batch `(mean, var)` per train-mode BN layer.
    bn_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

fn run(net: &Network, params: &Params, batch: &Tensor, mode: Mode) -> Result<RunOutput> {
    let expected = batched(batch.shape().first().copied().unwrap_or(0), &net.spec.input_shape);
    if batch.shape() != expected.as_slice() || batch.shape()[0] == 0 {
        return Err(Error::Shape(format!(
            "batch {:?} does not match input shape {:?}",
            batch.shape(),
            net.spec.input_shape
        )));
    }
    if params.layers.len() != net.plans.len() {
        return Err(Error::Contract("parameter store built for another network".into()));
    }
    let n = batch.shape()[0];
    let layers = net.plans.len();
    let mut inputs: Vec<Tensor> = Vec::with_capacity(layers);
    let mut aux = Vec::with_capacity(layers);
    let mut bn_stats = vec![None; layers];
    let mut x = batch.clone();
    let mut logits = None;
    for (i, plan) in net.plans.iter().enumerate() {
        let out_shape = batched(n, &plan.output);
        let mut layer_aux = Aux::None;
        let y = match (&plan.op, &params.layers[i]) {
            (PlannedOp::Dense { in_len, units, .. }, LayerParams::Dense { weight, bias }) => {
                let w = weight.value.data();
                let mut y = vec![0.0; n * units];
                for s in 0..n {
                    let xs = &x.data()[s * in_len..(s + 1) * in_len];
                    for o in 0..*units {
                        let row = &w[o * in_len..(o + 1) * in_len];
                        let mut acc = 0.0;
                        for (a, b) in row.iter().zip(xs) {
                            acc += a * b;
                        }
                        if let Some(b) = bias {
                            acc += b.value.data()[o];
                        }
                        y[s * units + o] = acc;
                    }
                }
                Tensor::new(&out_shape, y)?
            }
            (PlannedOp::Conv { geometry: g, .. }, LayerParams::Conv { kernel, bias }) => {
                let mut y = Tensor::zeros(&out_shape);
                let spatial = g.out_h() * g.out_w();
                for s in 0..n {
                    let out = y.sample_mut(s);
                    conv_forward_into(g, x.sample(s), kernel.value.data(), out);
                    if let Some(b) = bias {
                        for (c, chunk) in out.chunks_exact_mut(spatial).enumerate() {
                            let bc = b.value.data()[c];
                            chunk.iter_mut().for_each(|v| *v += bc);
                        }
                    }
                }
                y
            }
            (
                PlannedOp::BatchNorm { channels, spatial },
                LayerParams::BatchNorm { scale, shift, running_mean, running_var },
            ) => {
                let (channels, spatial) = (*channels, *spatial);
                let count = (n * spatial) as f64;
                let (mean, var) = match mode {
                    Mode::Train => {
                        if n < 2 {
                            return Err(Error::Config(
                                "batch normalization needs a batch of at least 2 in train mode".into(),
                            ));
                        }
                        let mut mean = vec![0.0; channels];
                        let mut var = vec![0.0; channels];
                        for c in 0..channels {
                            let mut sum = 0.0;
                            for s in 0..n {
                                sum += x.sample(s)[c * spatial..(c + 1) * spatial].iter().sum::<f64>();
                            }
                            mean[c] = sum / count;
                            let mut sq = 0.0;
                            for s in 0..n {
                                for v in &x.sample(s)[c * spatial..(c + 1) * spatial] {
                                    sq += (v - mean[c]) * (v - mean[c]);
                                }
                            }
                            var[c] = sq / count;
                        }
                        bn_stats[i] = Some((mean.clone(), var.clone()));
                        (mean, var)
                    }
                    Mode::Eval => (running_mean.clone(), running_var.clone()),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPSILON)).collect();
                let mut x_hat = vec![0.0; x.len()];
                let mut y = Tensor::zeros(&out_shape);
                for s in 0..n {
                    let xs = x.sample(s);
                    let base = s * channels * spatial;
                    let ys = y.sample_mut(s);
                    for c in 0..channels {
                        let (g, b) = (scale.value.data()[c], shift.value.data()[c]);
                        for k in c * spatial..(c + 1) * spatial {
                            let h = (xs[k] - mean[c]) * inv_std[c];
                            x_hat[base + k] = h;
                            ys[k] = g * h + b;
                        }
                    }
                }
                layer_aux = Aux::BatchNorm { x_hat, inv_std };
                y
            }
            (PlannedOp::Activation(act), LayerParams::Activation { prelu, ng }) => {
                ActivationView::new(act.base, ng.as_ref(), prelu.as_ref().map(|p| &p.value)).forward(&x)?
            }
            (PlannedOp::MaxPool { channels, h, w }, LayerParams::Empty) => {
                let mut y = Tensor::zeros(&out_shape);
                let per = channels * (h / 2) * (w / 2);
                let mut argmax = vec![0; n * per];
                for s in 0..n {
                    maxpool_forward_into(
                        *channels,
                        *h,
                        *w,
                        x.sample(s),
                        y.sample_mut(s),
                        &mut argmax[s * per..(s + 1) * per],
                    );
                }
                layer_aux = Aux::MaxPool(argmax);
                y
            }
            (PlannedOp::GlobalAvgPool { spatial, .. }, LayerParams::Empty) => {
                let data = x
                    .data()
                    .chunks_exact(*spatial)
                    .map(|ch| ch.iter().sum::<f64>() / *spatial as f64)
                    .collect();
                Tensor::new(&out_shape, data)?
            }
            (PlannedOp::Loss { .. }, LayerParams::Empty) => {
                logits = Some(x.clone());
                x.clone()
            }
            (PlannedOp::ResidualStart, LayerParams::Empty) => x.clone(),
            (PlannedOp::ResidualEnd { start, shortcut }, LayerParams::Empty) => {
                let mut y = x.clone();
                let skip = &inputs[*start];
                for s in 0..n {
                    shortcut.add_forward(skip.sample(s), y.sample_mut(s));
                }
                y
            }
            _ => return Err(layer_mismatch(i)),
        };
        inputs.push(x);
        aux.push(layer_aux);
        x = y;
    }
    Ok(RunOutput {
        inputs,
        aux,
        logits: logits.expect("network ends with a loss layer"),
        bn_stats,
    })
}

/// Row-wise softmax and per-sample negative log-likelihoods.
fn softmax_xent(logits: &Tensor, labels: &[usize]) -> (Tensor, f64) {
    let classes = logits.shape()[1];
    let mut probs = logits.clone();
    let mut total = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        let row = probs.sample_mut(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        let z_label = logits.data()[s * classes + label];
        total += libm::log(sum) + max - z_label;
        row.iter_mut().for_each(|v| *v /= sum);
    }
    (probs, total / labels.len() as f64)
}

pub(super) fn forward(net: &Network, params: &mut Params, batch: &Tensor, labels: &[usize], mode: Mode) -> Result<ForwardOutput> {
    let n = batch.shape().first().copied().unwrap_or(0);
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= net.spec.num_classes) {
        return Err(Error::Shape(format!(
            "label {bad} out of range for {} classes",
            net.spec.num_classes
        )));
    }
    let out = run(net, params, batch, mode)?;
    let (probs, loss) = softmax_xent(&out.logits, labels);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss {loss}")));
    }
    for (layer, stats) in params.layers.iter_mut().zip(out.bn_stats) {
        if let (LayerParams::BatchNorm { running_mean, running_var, .. }, Some((mean, var))) = (layer, stats) {
            for (r, m) in running_mean.iter_mut().zip(&mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, v) in running_var.iter_mut().zip(&var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }
    Ok(ForwardOutput {
        logits: out.logits,
        loss,
        cache: Cache {
            generation: params.generation(),
            mode,
            labels: labels.to_vec(),
            inputs: out.inputs,
            aux: out.aux,
            probs,
        },
    })
}

pub(super) fn predict(net: &Network, params: &Params, batch: &Tensor) -> Result<Tensor> {
    Ok(run(net, params, batch, Mode::Eval)?.logits)
}

pub(super) fn backward(net: &Network, params: &Params, cache: &Cache) -> Result<BackwardOutput> {
    if cache.generation != params.generation() {
        return Err(Error::Contract(format!(
            "stale cache: recorded at parameter generation {}, parameters are at {}",
            cache.generation,
            params.generation()
        )));
    }
    if cache.inputs.len() != net.plans.len() || params.layers.len() != net.plans.len() {
        return Err(Error::Contract("cache or parameters belong to another network".into()));
    }
    let n = cache.batch_size();
    let inv_n = 1.0 / n as f64;
    let layers = net.plans.len();
    let mut grads: Vec<Vec<(ParamKind, Tensor)>> = vec![Vec::new(); layers];
    let mut output_grads: Vec<Option<Tensor>> = vec![None; layers];
    let mut pending: Vec<Option<Tensor>> = vec![None; layers];
    let mut delta = Tensor::zeros(&[1]);

    for i in (0..layers).rev() {
        let plan = &net.plans[i];
        let x = &cache.inputs[i];
        let in_shape = batched(n, &plan.input);
        let delta_in = match (&plan.op, &params.layers[i]) {
            (PlannedOp::Loss { classes }, _) => {
                let mut d = cache.probs.clone();
                for (s, &label) in cache.labels.iter().enumerate() {
                    d.data_mut()[s * classes + label] -= 1.0;
                }
                d
            }
            (PlannedOp::Dense { in_len, units, .. }, LayerParams::Dense { weight, bias }) => {
                let w = weight.value.data();
                let mut gw = vec![0.0; units * in_len];
                let mut gb = vec![0.0; *units];
                let mut gx = vec![0.0; n * in_len];
                for s in 0..n {
                    let xs = &x.data()[s * in_len..(s + 1) * in_len];
                    let ds = &delta.data()[s * units..(s + 1) * units];
                    let gxs = &mut gx[s * in_len..(s + 1) * in_len];
                    for (o, &d) in ds.iter().enumerate() {
                        gb[o] += d;
                        let grow = &mut gw[o * in_len..(o + 1) * in_len];
                        for (g, &xv) in grow.iter_mut().zip(xs) {
                            *g += d * xv;
                        }
                        for (g, &wv) in gxs.iter_mut().zip(&w[o * in_len..(o + 1) * in_len]) {
                            *g += d * wv;
                        }
                    }
                }
                gw.iter_mut().for_each(|g| *g *= inv_n);
                grads[i].push((ParamKind::Weight, Tensor::new(weight.value.shape(), gw)?));
                if bias.is_some() {
                    gb.iter_mut().for_each(|g| *g *= inv_n);
                    grads[i].push((ParamKind::Bias, Tensor::new(&[*units], gb)?));
                }
                output_grads[i] = Some(delta.clone());
                Tensor::new(&in_shape, gx)?
            }
            (PlannedOp::Conv { geometry: g, .. }, LayerParams::Conv { kernel, bias }) => {
                let mut gk = vec![0.0; g.kernel_len()];
                let mut gx = Tensor::zeros(&in_shape);
                for s in 0..n {
                    conv_backward_accumulate(
                        g,
                        x.sample(s),
                        kernel.value.data(),
                        delta.sample(s),
                        Some(gx.sample_mut(s)),
                        &mut gk,
                    );
                }
                gk.iter_mut().for_each(|v| *v *= inv_n);
                grads[i].push((ParamKind::Weight, Tensor::new(kernel.value.shape(), gk)?));
                if bias.is_some() {
                    let spatial = g.out_h() * g.out_w();
                    let mut gb = vec![0.0; g.c_out];
                    for s in 0..n {
                        for (c, chunk) in delta.sample(s).chunks_exact(spatial).enumerate() {
                            gb[c] += chunk.iter().sum::<f64>();
                        }
                    }
                    gb.iter_mut().for_each(|v| *v *= inv_n);
                    grads[i].push((ParamKind::Bias, Tensor::new(&[g.c_out], gb)?));
                }
                output_grads[i] = Some(delta.clone());
                gx
            }
            (PlannedOp::BatchNorm { channels, spatial }, LayerParams::BatchNorm { scale, .. }) => {
                let Aux::BatchNorm { x_hat, inv_std } = &cache.aux[i] else {
                    return Err(layer_mismatch(i));
                };
                let (channels, spatial) = (*channels, *spatial);
                let count = (n * spatial) as f64;
                let mut sum_d = vec![0.0; channels];
                let mut sum_dx = vec![0.0; channels];
                for s in 0..n {
                    let ds = delta.sample(s);
                    let base = s * channels * spatial;
                    for c in 0..channels {
                        for k in c * spatial..(c + 1) * spatial {
                            sum_d[c] += ds[k];
                            sum_dx[c] += ds[k] * x_hat[base + k];
                        }
                    }
                }
                let mut gx = Tensor::zeros(&in_shape);
                for s in 0..n {
                    let base = s * channels * spatial;
                    let ds = delta.sample(s).to_vec();
                    let gs = gx.sample_mut(s);
                    for c in 0..channels {
                        let gamma = scale.value.data()[c];
                        for k in c * spatial..(c + 1) * spatial {
                            gs[k] = match cache.mode {
                                Mode::Train => {
                                    gamma * inv_std[c] / count
                                        * (count * ds[k] - sum_d[c] - x_hat[base + k] * sum_dx[c])
                                }
                                Mode::Eval => gamma * inv_std[c] * ds[k],
                            };
                        }
                    }
                }
                let g_scale = sum_dx.iter().map(|v| v * inv_n).collect();
                let g_shift = sum_d.iter().map(|v| v * inv_n).collect();
                grads[i].push((ParamKind::BnScale, Tensor::new(&[channels], g_scale)?));
                grads[i].push((ParamKind::BnShift, Tensor::new(&[channels], g_shift)?));
                gx
            }
            (PlannedOp::Activation(act), LayerParams::Activation { prelu, ng }) => {
                let view = ActivationView::new(act.base, ng.as_ref(), prelu.as_ref().map(|p| &p.value));
                let ag = view.backward(x, &delta)?;
                if let Some(a) = ag.slope {
                    grads[i].push((ParamKind::PreluSlope, a));
                }
                if let (Some(t), Some(ng)) = (ag.shift, ng) {
                    let t = if ng.trainable { t } else { Tensor::zeros(ng.t.shape()) };
                    grads[i].push((ParamKind::NgShift, t));
                }
                ag.input
            }
            (PlannedOp::MaxPool { channels, h, w }, LayerParams::Empty) => {
                let Aux::MaxPool(argmax) = &cache.aux[i] else {
                    return Err(layer_mismatch(i));
                };
                let per = channels * (h / 2) * (w / 2);
                let mut gx = Tensor::zeros(&in_shape);
                for s in 0..n {
                    let ds = delta.sample(s).to_vec();
                    let gs = gx.sample_mut(s);
                    for (d, &idx) in ds.iter().zip(&argmax[s * per..(s + 1) * per]) {
                        gs[idx] += d;
                    }
                }
                gx
            }
            (PlannedOp::GlobalAvgPool { spatial, .. }, LayerParams::Empty) => {
                let scale = 1.0 / *spatial as f64;
                let data = delta
                    .data()
                    .iter()
                    .flat_map(|&d| core::iter::repeat_n(d * scale, *spatial))
                    .collect();
                Tensor::new(&in_shape, data)?
            }
            (PlannedOp::ResidualStart, LayerParams::Empty) => {
                let mut d = delta.clone();
                if let Some(p) = pending[i].take() {
                    d.data_mut().iter_mut().zip(p.data()).for_each(|(a, b)| *a += b);
                }
                d
            }
            (PlannedOp::ResidualEnd { start, shortcut }, LayerParams::Empty) => {
                let skip_shape = batched(n, &net.plans[*start].input);
                let mut skip = Tensor::zeros(&skip_shape);
                for s in 0..n {
                    shortcut.add_backward(delta.sample(s), skip.sample_mut(s));
                }
                pending[*start] = Some(skip);
                delta.clone()
            }
            _ => return Err(layer_mismatch(i)),
        };
        delta = delta_in;
    }
    Ok(BackwardOutput {
        grads: Grads { layers: grads },
        output_grads,
    })
}
