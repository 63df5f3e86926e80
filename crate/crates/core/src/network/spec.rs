use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::activations::{BaseActivation, Granularity, DEFAULT_T_INIT};
use crate::error::{Error, Result};

/// Settings for the NG wrapper of an activation layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgSpec {
    pub t_init: f64,
    pub granularity: Granularity,
    pub trainable: bool,
}

impl Default for NgSpec {
    fn default() -> Self {
        Self {
            t_init: DEFAULT_T_INIT,
            granularity: Granularity::ChannelWise,
            trainable: true,
        }
    }
}

/// A base activation, optionally wrapped as an NG.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationSpec {
    pub base: BaseActivation,
    pub ng: Option<NgSpec>,
}

impl ActivationSpec {
    pub fn plain(base: BaseActivation) -> Self {
        Self { base, ng: None }
    }

    pub fn ng(base: BaseActivation, ng: NgSpec) -> Self {
        Self { base, ng: Some(ng) }
    }

    pub fn identity() -> Self {
        Self::plain(BaseActivation::Identity)
    }

    pub fn relu() -> Self {
        Self::plain(BaseActivation::Relu)
    }

    /// NG-ReLU with the default trainable shift starting at −1.
    pub fn ng_relu() -> Self {
        Self::ng(BaseActivation::Relu, NgSpec::default())
    }

    pub fn is_identity(&self) -> bool {
        self.base == BaseActivation::Identity && self.ng.is_none()
    }
}

/// One entry of a network description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// Fully connected layer; flattens its input.
    Dense { units: usize },
    /// 3×3 convolution, zero padding 1.
    Conv { channels: usize, stride: usize },
    BatchNorm,
    Activation(ActivationSpec),
    /// 2×2 non-overlapping max pooling.
    MaxPool,
    GlobalAvgPool,
    /// Fused softmax and mean cross-entropy; must be the last layer.
    SoftmaxCrossEntropy,
    /// Saves its input for the identity shortcut.
    ResidualStart,
    /// Adds the shortcut saved by the matching [`LayerSpec::ResidualStart`].
    ResidualEnd,
}

impl LayerSpec {
    pub fn is_weighted(&self) -> bool {
        matches!(self, Self::Dense { .. } | Self::Conv { .. })
    }
}

/// Layer sequence plus the per-sample input shape it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Per-sample input shape: `[C, H, W]` for images, `[D]` for vectors.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn conv_count(&self) -> usize {
        self.count(|l| matches!(l, LayerSpec::Conv { .. }))
    }

    pub fn dense_count(&self) -> usize {
        self.count(|l| matches!(l, LayerSpec::Dense { .. }))
    }

    /// Number of weighted (conv + dense) layers, the usual "depth" of a CNN.
    pub fn depth(&self) -> usize {
        self.count(LayerSpec::is_weighted)
    }

    fn count(&self, f: impl Fn(&LayerSpec) -> bool) -> usize {
        self.layers.iter().filter(|l| f(l)).count()
    }
}

fn push_conv(layers: &mut Vec<LayerSpec>, channels: usize, stride: usize, with_bn: bool, act: ActivationSpec) {
    layers.push(LayerSpec::Conv { channels, stride });
    if with_bn {
        layers.push(LayerSpec::BatchNorm);
    }
    layers.push(LayerSpec::Activation(act));
}

fn check_image_input(input_shape: &[usize], divisor: usize) -> Result<()> {
    if input_shape.len() != 3 || input_shape.contains(&0) {
        return Err(Error::Config(format!("image input must be C×H×W, got {input_shape:?}")));
    }
    if !input_shape[1].is_multiple_of(divisor) || !input_shape[2].is_multiple_of(divisor) {
        return Err(Error::Config(format!(
            "spatial size {}x{} must be divisible by {divisor}",
            input_shape[1], input_shape[2]
        )));
    }
    Ok(())
}

/// Plain VGG-style CNN: a stem conv, three stages of `k` convs at widths
/// `w, 2w, 4w` separated by two max-pools, global average pooling and a
/// dense classifier. `depth = 2 + 3k` counts every conv plus the classifier.
pub fn build_plain_cnn(
    input_shape: &[usize],
    depth: usize,
    base_width: usize,
    num_classes: usize,
    with_bn: bool,
    activation: ActivationSpec,
) -> Result<NetworkSpec> {
    check_image_input(input_shape, 4)?;
    if depth < 5 || !(depth - 2).is_multiple_of(3) {
        return Err(Error::Config(format!(
            "plain CNN depth {depth} is not of the form 2 + 3k with k >= 1"
        )));
    }
    if base_width == 0 || num_classes < 2 {
        return Err(Error::Config("plain CNN needs width >= 1 and >= 2 classes".into()));
    }
    let per_stage = (depth - 2) / 3;
    let mut layers = Vec::new();
    push_conv(&mut layers, base_width, 1, with_bn, activation);
    for stage in 0..3 {
        if stage > 0 {
            layers.push(LayerSpec::MaxPool);
        }
        for _ in 0..per_stage {
            push_conv(&mut layers, base_width << stage, 1, with_bn, activation);
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense { units: num_classes });
    layers.push(LayerSpec::SoftmaxCrossEntropy);
    Ok(NetworkSpec {
        input_shape: input_shape.to_vec(),
        num_classes,
        layers,
    })
}

/// Per-stage conv counts of [`build_plain_cnn`] for a given depth.
pub fn plain_cnn_stage_counts(depth: usize) -> Result<[usize; 3]> {
    if depth < 5 || !(depth - 2).is_multiple_of(3) {
        return Err(Error::Config(format!("plain CNN depth {depth} is not 2 + 3k")));
    }
    let k = (depth - 2) / 3;
    Ok([k, k, k])
}

/// CIFAR-style residual network of identity blocks: a stem conv, three stages
/// of `k` two-conv blocks at widths `w, 2w, 4w` (the first block of stages 2
/// and 3 downsamples with stride 2), global average pooling and a dense
/// classifier. `depth = 6k + 2`.
pub fn build_resnet(
    input_shape: &[usize],
    depth: usize,
    base_width: usize,
    num_classes: usize,
    with_bn: bool,
    activation: ActivationSpec,
) -> Result<NetworkSpec> {
    check_image_input(input_shape, 4)?;
    if depth < 8 || depth % 6 != 2 {
        return Err(Error::Config(format!(
            "ResNet depth {depth} is not of the form 6k + 2 with k >= 1"
        )));
    }
    if base_width == 0 || num_classes < 2 {
        return Err(Error::Config("ResNet needs width >= 1 and >= 2 classes".into()));
    }
    let blocks = (depth - 2) / 6;
    let mut layers = Vec::new();
    push_conv(&mut layers, base_width, 1, with_bn, activation);
    for stage in 0..3 {
        let width = base_width << stage;
        for b in 0..blocks {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            layers.push(LayerSpec::ResidualStart);
            push_conv(&mut layers, width, stride, with_bn, activation);
            layers.push(LayerSpec::Conv { channels: width, stride: 1 });
            if with_bn {
                layers.push(LayerSpec::BatchNorm);
            }
            layers.push(LayerSpec::ResidualEnd);
            layers.push(LayerSpec::Activation(activation));
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense { units: num_classes });
    layers.push(LayerSpec::SoftmaxCrossEntropy);
    Ok(NetworkSpec {
        input_shape: input_shape.to_vec(),
        num_classes,
        layers,
    })
}

/// Multilayer perceptron: one activation after each hidden dense layer.
pub fn build_mlp(
    input_dim: usize,
    hidden: &[usize],
    num_classes: usize,
    with_bn: bool,
    activation: ActivationSpec,
) -> Result<NetworkSpec> {
    if input_dim == 0 || num_classes < 2 || hidden.contains(&0) {
        return Err(Error::Config("MLP needs positive sizes and >= 2 classes".into()));
    }
    let mut layers = Vec::new();
    for &units in hidden {
        layers.push(LayerSpec::Dense { units });
        if with_bn {
            layers.push(LayerSpec::BatchNorm);
        }
        layers.push(LayerSpec::Activation(activation));
    }
    layers.push(LayerSpec::Dense { units: num_classes });
    layers.push(LayerSpec::SoftmaxCrossEntropy);
    Ok(NetworkSpec {
        input_shape: vec![input_dim],
        num_classes,
        layers,
    })
}

/// The small capacity-probe CNN: two convs of `kernels` 3×3 filters, each
/// followed by `activation`, then a dense classifier without activation.
pub fn build_toy_cnn(
    input_shape: &[usize],
    kernels: usize,
    num_classes: usize,
    activation: ActivationSpec,
) -> Result<NetworkSpec> {
    check_image_input(input_shape, 1)?;
    if kernels == 0 || num_classes < 2 {
        return Err(Error::Config("toy CNN needs kernels >= 1 and >= 2 classes".into()));
    }
    let mut layers = Vec::new();
    for _ in 0..2 {
        layers.push(LayerSpec::Conv { channels: kernels, stride: 1 });
        if !activation.is_identity() {
            layers.push(LayerSpec::Activation(activation));
        }
    }
    layers.push(LayerSpec::Dense { units: num_classes });
    layers.push(LayerSpec::SoftmaxCrossEntropy);
    Ok(NetworkSpec {
        input_shape: input_shape.to_vec(),
        num_classes,
        layers,
    })
}
