//! Base activations and the nonlinearity generator (NG) wrapper.
//!
//! An NG activation evaluates `f(x − t) + t` for a base activation `f` and a
//! trainable shift `t`. For a ReLU base this is `max(x, t)`: inputs above `t`
//! pass through unchanged, so with `t` below every input the layer is linear.
//!
//! All functions here take batched inputs shaped `[N, C, ...]`. The channel
//! axis is dimension 1; for dense activations `[N, D]` every unit is its own
//! channel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_PRELU_SLOPE: f64 = 0.25;
pub const DEFAULT_T_INIT: f64 = -1.0;

/// Pointwise base activation `f`.
///
/// `Prelu` carries no slope here: its per-channel slopes are a trainable
/// parameter owned by the layer and passed alongside the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseActivation {
    Identity,
    Relu,
    LeakyRelu { alpha: f64 },
    Prelu,
    Selu { lambda: f64, alpha: f64 },
}

impl BaseActivation {
    pub fn leaky_relu() -> Self {
        Self::LeakyRelu { alpha: DEFAULT_LEAKY_SLOPE }
    }

    pub fn selu() -> Self {
        Self::Selu { lambda: SELU_LAMBDA, alpha: SELU_ALPHA }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::LeakyRelu { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(Error::Config(format!("leaky ReLU slope {alpha} outside (0, 1)")))
            }
            Self::Selu { lambda, alpha } if !(lambda > 0.0 && alpha > 0.0) => Err(Error::Config(
                format!("SELU constants must be positive, got lambda {lambda}, alpha {alpha}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_prelu(&self) -> bool {
        matches!(self, Self::Prelu)
    }

    /// `f(u)`; `slope` is only read for PReLU.
    #[inline]
    pub fn eval(&self, u: f64, slope: f64) -> f64 {
        match *self {
            Self::Identity => u,
            Self::Relu => {
                if u > 0.0 {
                    u
                } else {
                    0.0
                }
            }
            Self::LeakyRelu { alpha } => {
                if u > 0.0 {
                    u
                } else {
                    alpha * u
                }
            }
            Self::Prelu => {
                if u > 0.0 {
                    u
                } else {
                    slope * u
                }
            }
            Self::Selu { lambda, alpha } => {
                if u > 0.0 {
                    lambda * u
                } else {
                    lambda * alpha * (libm::exp(u) - 1.0)
                }
            }
        }
    }

    /// `f(x − t) + t`. Piecewise-linear bases return `x` itself on the active
    /// side, so the wrapper is exactly `max(x, t)` for ReLU.
    #[inline]
    pub fn eval_shifted(&self, x: f64, t: f64, slope: f64) -> f64 {
        match *self {
            Self::Identity => x,
            Self::Relu | Self::LeakyRelu { .. } | Self::Prelu if x > t => x,
            Self::Relu => t,
            _ => self.eval(x - t, slope) + t,
        }
    }

    /// `f′(u)` taking the active-side value `f′(0⁺)` at the kink.
    #[inline]
    pub fn derivative(&self, u: f64, slope: f64) -> f64 {
        if u >= 0.0 {
            self.derivative_active()
        } else {
            self.derivative_inactive(u, slope)
        }
    }

    /// `f′(u)` taking the inactive-side value `f′(0⁻)` at the kink.
    #[inline]
    pub fn derivative_left(&self, u: f64, slope: f64) -> f64 {
        if u > 0.0 {
            self.derivative_active()
        } else {
            self.derivative_inactive(u, slope)
        }
    }

    #[inline]
    fn derivative_active(&self) -> f64 {
        match *self {
            Self::Selu { lambda, .. } => lambda,
            _ => 1.0,
        }
    }

    #[inline]
    fn derivative_inactive(&self, u: f64, slope: f64) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::Relu => 0.0,
            Self::LeakyRelu { alpha } => alpha,
            Self::Prelu => slope,
            Self::Selu { lambda, alpha } => lambda * alpha * libm::exp(u),
        }
    }
}

/// How many elements share one shift value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    /// One `t` per node of the feature map.
    ElementWise,
    /// One `t` per channel, shared across spatial positions.
    ChannelWise,
    /// A single `t` for the whole layer.
    LayerWise,
}

impl Granularity {
    /// Shape of `t` for a layer whose per-sample feature shape is `features`.
    pub fn shift_shape(&self, features: &[usize]) -> Vec<usize> {
        match self {
            Self::ElementWise => features.to_vec(),
            Self::ChannelWise => vec![features[0]],
            Self::LayerWise => vec![1],
        }
    }
}

/// NG wrapper state: base activation, shift `t` and its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct NgActivation {
    pub base: BaseActivation,
    pub t: Tensor,
    /// Accumulated `Δt` of the momentum update.
    pub t_velocity: Tensor,
    pub granularity: Granularity,
    pub trainable: bool,
}

impl NgActivation {
    /// Shift initialized to `t_init` everywhere, zero velocity.
    pub fn new(
        base: BaseActivation,
        granularity: Granularity,
        features: &[usize],
        t_init: f64,
        trainable: bool,
    ) -> Result<Self> {
        base.validate()?;
        if features.is_empty() || features.contains(&0) {
            return Err(Error::Shape(format!("invalid feature shape {features:?}")));
        }
        let shape = granularity.shift_shape(features);
        Ok(Self {
            base,
            t: Tensor::full(&shape, t_init),
            t_velocity: Tensor::zeros(&shape),
            granularity,
            trainable,
        })
    }

    /// Single-scalar shift, usable on any input shape.
    pub fn scalar(base: BaseActivation, t: f64, trainable: bool) -> Self {
        Self {
            base,
            t: Tensor::scalar(t),
            t_velocity: Tensor::scalar(0.0),
            granularity: Granularity::LayerWise,
            trainable,
        }
    }
}

/// Resolved layout of a batched activation input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub batch: usize,
    pub channels: usize,
    pub spatial: usize,
}

impl Layout {
    pub(crate) fn of(x: &Tensor) -> Result<Self> {
        let s = x.shape();
        if s.len() < 2 {
            return Err(Error::Shape(format!(
                "activation input must be batched [N, C, ...], got {s:?}"
            )));
        }
        let sample: usize = s[1..].iter().product();
        Ok(Self {
            batch: s[0],
            channels: s[1],
            spatial: sample / s[1],
        })
    }
}

/// Borrowed view of what an activation layer needs besides its input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ActivationView<'a> {
    pub base: BaseActivation,
    pub shift: Option<(&'a [f64], Granularity)>,
    pub slope: Option<&'a [f64]>,
}

impl<'a> ActivationView<'a> {
    pub(crate) fn new(base: BaseActivation, ng: Option<&'a NgActivation>, slope: Option<&'a Tensor>) -> Self {
        Self {
            base,
            shift: ng.map(|n| (n.t.data(), n.granularity)),
            slope: slope.map(|s| s.data()),
        }
    }

    pub(crate) fn check(&self, x: &Tensor) -> Result<Layout> {
        let l = Layout::of(x)?;
        if let Some((t, g)) = self.shift {
            let expected: usize = g.shift_shape(&x.shape()[1..]).iter().product();
            if t.len() != expected {
                return Err(Error::Shape(format!(
                    "{g:?} shift with {} values does not fit input {:?}",
                    t.len(),
                    x.shape()
                )));
            }
        }
        match (self.base.is_prelu(), self.slope) {
            (true, None) => return Err(Error::Config("PReLU base without slopes".into())),
            (true, Some(a)) if a.len() != l.channels => {
                return Err(Error::Shape(format!(
                    "{} PReLU slopes for {} channels",
                    a.len(),
                    l.channels
                )))
            }
            _ => {}
        }
        Ok(l)
    }

    #[inline]
    fn shift_at(&self, l: &Layout, e: usize) -> f64 {
        match self.shift {
            None => 0.0,
            Some((t, Granularity::ElementWise)) => t[e],
            Some((t, Granularity::ChannelWise)) => t[e / l.spatial],
            Some((t, Granularity::LayerWise)) => t[0],
        }
    }

    #[inline]
    fn slope_at(&self, l: &Layout, e: usize) -> f64 {
        self.slope.map_or(0.0, |a| a[e / l.spatial])
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let l = self.check(x)?;
        let mut out = x.clone();
        for n in 0..l.batch {
            for (e, v) in out.sample_mut(n).iter_mut().enumerate() {
                let t = self.shift_at(&l, e);
                *v = self.base.eval_shifted(*v, t, self.slope_at(&l, e));
            }
        }
        Ok(out)
    }

    /// Input gradient plus batch-averaged shift and slope gradients.
    pub(crate) fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<ActivationGrads> {
        let l = self.check(x)?;
        if grad_out.shape() != x.shape() {
            return Err(crate::error::shape_err("activation grad_out", grad_out.shape(), x.shape()));
        }
        let mut grad_x = grad_out.clone();
        let mut grad_t = self.shift.map(|(t, _)| vec![0.0; t.len()]);
        let mut grad_a = self.slope.map(|a| vec![0.0; a.len()]);
        let index_t = |e: usize| match self.shift {
            Some((_, Granularity::ElementWise)) => e,
            Some((_, Granularity::ChannelWise)) => e / l.spatial,
            _ => 0,
        };
        for n in 0..l.batch {
            let xs = x.sample(n);
            for (e, g) in grad_x.sample_mut(n).iter_mut().enumerate() {
                let t = self.shift_at(&l, e);
                let a = self.slope_at(&l, e);
                let u = xs[e] - t;
                let upstream = *g;
                *g = upstream * self.base.derivative(u, a);
                if let Some(gt) = grad_t.as_mut() {
                    // x ≤ t counts as the inactive side for the shift gradient.
                    gt[index_t(e)] += upstream * (1.0 - self.base.derivative_left(u, a));
                }
                if let Some(ga) = grad_a.as_mut() {
                    if u < 0.0 {
                        ga[e / l.spatial] += upstream * u;
                    }
                }
            }
        }
        let scale = 1.0 / l.batch as f64;
        let finish = |v: Option<Vec<f64>>, shape: Option<&[usize]>| -> Result<Option<Tensor>> {
            match (v, shape) {
                (Some(mut v), Some(shape)) => {
                    v.iter_mut().for_each(|g| *g *= scale);
                    Tensor::new(shape, v).map(Some)
                }
                _ => Ok(None),
            }
        };
        let t_shape = self.shift.map(|(_, g)| g.shift_shape(&x.shape()[1..]));
        let a_shape = self.slope.map(|a| vec![a.len()]);
        Ok(ActivationGrads {
            input: grad_x,
            shift: finish(grad_t, t_shape.as_deref())?,
            slope: finish(grad_a, a_shape.as_deref())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ActivationGrads {
    pub input: Tensor,
    pub shift: Option<Tensor>,
    pub slope: Option<Tensor>,
}

/// `f(x − t) + t`, with `t` broadcast over `x` by the granularity rule.
/// `slopes` are the per-channel PReLU slopes (ignored for other bases).
pub fn ng_forward(act: &NgActivation, x: &Tensor, slopes: Option<&Tensor>) -> Result<Tensor> {
    ActivationView::new(act.base, Some(act), slopes).forward(x)
}

/// Gradient of the loss with respect to the NG input: `grad_out · f′(x − t)`,
/// using `f′(0⁺)` at the kink.
pub fn ng_backward_input(act: &NgActivation, x: &Tensor, grad_out: &Tensor, slopes: Option<&Tensor>) -> Result<Tensor> {
    Ok(ActivationView::new(act.base, Some(act), slopes)
        .backward(x, grad_out)?
        .input)
}

/// Gradient with respect to `t`: `grad_out · (1 − f′(x − t))`, where `x == t`
/// counts as the inactive side. Summed over elements sharing a `t` and averaged
/// over the batch, so `grad_out` holds per-sample upstream gradients.
///
/// A frozen shift has no parameter and therefore a zero gradient.
pub fn ng_grad_t(act: &NgActivation, x: &Tensor, grad_out: &Tensor, slopes: Option<&Tensor>) -> Result<Tensor> {
    if !act.trainable {
        ActivationView::new(act.base, Some(act), slopes).check(x)?;
        return Ok(Tensor::zeros(act.t.shape()));
    }
    let grads = ActivationView::new(act.base, Some(act), slopes).backward(x, grad_out)?;
    Ok(grads.shift.expect("shift gradient present when a shift is given"))
}

/// Gradient with respect to the per-channel PReLU slopes, evaluated at the
/// shifted input `x − t`. Batch-averaged like [`ng_grad_t`].
pub fn prelu_grad_a(act: &NgActivation, x: &Tensor, grad_out: &Tensor, slopes: &Tensor) -> Result<Tensor> {
    if !act.base.is_prelu() {
        return Err(Error::Unsupported(format!(
            "slope gradient requested for {:?} base",
            act.base
        )));
    }
    let grads = ActivationView::new(act.base, Some(act), Some(slopes)).backward(x, grad_out)?;
    Ok(grads.slope.expect("slope gradient present for PReLU"))
}

/// Scaled exponential linear unit with the standard self-normalizing constants.
pub fn selu_forward(x: &Tensor) -> Tensor {
    let base = BaseActivation::selu();
    x.map(|v| base.eval(v, 0.0))
}
