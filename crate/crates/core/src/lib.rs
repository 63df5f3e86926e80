//! Nonlinearity-generator (NG) activations and a small, deterministic CNN/MLP
//! training engine, usable without the standard library.
//!
//! An NG activation evaluates `f(x − t) + t` for a base activation `f` and a
//! trainable shift `t`. Starting from a low `t`, inputs sit in the linear part
//! of `f`, so the network begins close to linear and gains nonlinearity as
//! training moves `t` upward.
//!
//! Modules:
//! - [`tensor`], [`kernels`]: dense `f64` tensors, matmul, 3×3 convolution, pooling.
//! - [`activations`]: base activations and the NG wrapper with its gradients.
//! - [`network`]: network descriptions, initializers, batch norm, forward/backward.
//! - [`optim`]: SGD with momentum and weight decay, shift updates, LR schedules.
//! - [`instrumentation`]: weight-update variance bounds, traces, gradient checking.

#![no_std]

extern crate alloc;

pub mod activations;
pub mod error;
pub mod instrumentation;
pub mod kernels;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{matmul, Tensor};
