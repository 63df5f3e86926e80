//! Network descriptions, parameter storage and whole-network forward/backward.
//!
//! Backward signals are per-sample: the signal reaching a layer is
//! `N · ∂L/∂output` for a batch of `N` and the batch-mean loss `L`, i.e. the
//! gradient of each sample's own loss. Parameter gradients are reduced as the
//! batch mean of per-sample contributions, which equals `∂L/∂param`.

mod engine;
mod params;
mod plan;
mod spec;

pub use engine::{BackwardOutput, Cache, ForwardOutput, Grads, Mode, BN_EPSILON, BN_MOMENTUM};
pub use params::{
    orthogonal_matrix, InitKind, InitScheme, LayerParams, Param, ParamKind, ParamSlot, Params,
};
pub use plan::{LayerPlan, PlannedOp, Shortcut};
pub use spec::{
    build_mlp, build_plain_cnn, build_resnet, build_toy_cnn, plain_cnn_stage_counts,
    ActivationSpec, LayerSpec, NetworkSpec, NgSpec,
};

use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::Tensor;

/// A validated network description with resolved per-layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    plans: Vec<LayerPlan>,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let plans = plan::compile(&spec)?;
        Ok(Self { spec, plans })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn plans(&self) -> &[LayerPlan] {
        &self.plans
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn init_params(&self, scheme: InitScheme) -> Params {
        params::init(&self.plans, scheme)
    }

    /// Runs the network on `batch` (`[N, input_shape...]`) and computes the
    /// mean cross-entropy against `labels`.
    ///
    /// Train mode normalizes with batch statistics and updates the running
    /// statistics stored in `params`; eval mode reads them. A non-finite loss is
    /// reported as [`crate::Error::Divergence`].
    pub fn forward(&self, params: &mut Params, batch: &Tensor, labels: &[usize], mode: Mode) -> Result<ForwardOutput> {
        engine::forward(self, params, batch, labels, mode)
    }

    /// Eval-mode logits without touching running statistics.
    pub fn predict(&self, params: &Params, batch: &Tensor) -> Result<Tensor> {
        engine::predict(self, params, batch)
    }

    /// Gradients of the batch-mean loss for every trainable tensor.
    pub fn backward(&self, params: &Params, cache: &Cache) -> Result<BackwardOutput> {
        engine::backward(self, params, cache)
    }
}
