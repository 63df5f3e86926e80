//! Convolution and pooling kernels for single `C×H×W` feature maps.
//!
//! Only the geometries the plain/residual CIFAR networks need are supported:
//! 3×3 kernels with zero padding 1 and stride 1 or 2, and non-overlapping
//! 2×2 max pooling. Batched callers loop over samples and reduce in order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;
const PAD: usize = 1;

/// Spatial output size of a 3×3, pad-1 convolution.
pub fn conv_output_len(len: usize, stride: usize) -> usize {
    (len + 2 * PAD - KERNEL) / stride + 1
}

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(c_in: usize, c_out: usize, h: usize, w: usize, stride: usize) -> Result<Self> {
        if stride != 1 && stride != 2 {
            return Err(Error::UnsupportedGeometry(format!("stride {stride}")));
        }
        if c_in == 0 || c_out == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "empty convolution geometry {c_in}x{h}x{w} -> {c_out}"
            )));
        }
        Ok(Self { c_in, c_out, h, w, stride })
    }

    pub fn out_h(&self) -> usize {
        conv_output_len(self.h, self.stride)
    }

    pub fn out_w(&self) -> usize {
        conv_output_len(self.w, self.stride)
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.out_h() * self.out_w()
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * KERNEL * KERNEL
    }

    /// Output columns `ox` whose input column `ox*stride + kx - 1` is inside the image.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        // in = o*s + k - 1  in [0, len)
        let lo = if k >= PAD { 0 } else { (PAD - k).div_ceil(self.stride) };
        let mut hi = out_len;
        while hi > lo && (hi - 1) * self.stride + k >= len + PAD {
            hi -= 1;
        }
        (lo, hi)
    }
}

/// `out[co, oy, ox] = Σ_ci Σ_ky Σ_kx k[co, ci, ky, kx] · in[ci, oy·s+ky−1, ox·s+kx−1]`.
pub(crate) fn conv_forward_into(g: &ConvGeometry, input: &[f64], kernels: &[f64], out: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let s = g.stride;
    out.fill(0.0);
    for co in 0..g.c_out {
        let out_c = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..g.c_in {
            let in_c = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..KERNEL {
                let (y0, y1) = g.valid_range(ky, g.h, oh);
                for kx in 0..KERNEL {
                    let wv = kernels[((co * g.c_in + ci) * KERNEL + ky) * KERNEL + kx];
                    let (x0, x1) = g.valid_range(kx, g.w, ow);
                    for oy in y0..y1 {
                        let iy = oy * s + ky - PAD;
                        let in_row = &in_c[iy * g.w..(iy + 1) * g.w];
                        let out_row = &mut out_c[oy * ow..(oy + 1) * ow];
                        for ox in x0..x1 {
                            out_row[ox] += wv * in_row[ox * s + kx - PAD];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv_forward_into`]: adds into `grad_input` and `grad_kernels`.
pub(crate) fn conv_backward_accumulate(
    g: &ConvGeometry,
    input: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernels: &mut [f64],
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let s = g.stride;
    for co in 0..g.c_out {
        let go_c = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..g.c_in {
            let in_c = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..KERNEL {
                let (y0, y1) = g.valid_range(ky, g.h, oh);
                for kx in 0..KERNEL {
                    let (x0, x1) = g.valid_range(kx, g.w, ow);
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * s + ky - PAD;
                        let in_row = &in_c[iy * g.w..(iy + 1) * g.w];
                        let go_row = &go_c[oy * ow..(oy + 1) * ow];
                        for ox in x0..x1 {
                            acc += go_row[ox] * in_row[ox * s + kx - PAD];
                        }
                    }
                    grad_kernels[((co * g.c_in + ci) * KERNEL + ky) * KERNEL + kx] += acc;
                }
            }
        }
    }
    let Some(grad_input) = grad_input else { return };
    for co in 0..g.c_out {
        let go_c = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..g.c_in {
            let gi_c = &mut grad_input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..KERNEL {
                let (y0, y1) = g.valid_range(ky, g.h, oh);
                for kx in 0..KERNEL {
                    let wv = kernels[((co * g.c_in + ci) * KERNEL + ky) * KERNEL + kx];
                    let (x0, x1) = g.valid_range(kx, g.w, ow);
                    for oy in y0..y1 {
                        let iy = oy * s + ky - PAD;
                        let gi_row = &mut gi_c[iy * g.w..(iy + 1) * g.w];
                        let go_row = &go_c[oy * ow..(oy + 1) * ow];
                        for ox in x0..x1 {
                            gi_row[ox * s + kx - PAD] += wv * go_row[ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geometry(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<ConvGeometry> {
    let ks = kernels.shape();
    if ks.len() != 4 {
        return Err(Error::Shape(format!("kernels must be rank 4, got {ks:?}")));
    }
    if ks[2] != KERNEL || ks[3] != KERNEL {
        return Err(Error::UnsupportedGeometry(format!(
            "{}x{} kernels (only 3x3 is supported)",
            ks[2], ks[3]
        )));
    }
    let is = input.shape();
    if is.len() != 3 {
        return Err(Error::Shape(format!("conv input must be C×H×W, got {is:?}")));
    }
    if is[0] != ks[1] {
        return Err(Error::Shape(format!(
            "conv input has {} channels but kernels expect {}",
            is[0], ks[1]
        )));
    }
    ConvGeometry::new(ks[1], ks[0], is[1], is[2], stride)
}

/// 3×3 convolution with zero padding 1 of a `C_in×H×W` map by `C_out×C_in×3×3` kernels.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_geometry(input, kernels, stride)?;
    let mut out = vec![0.0; g.output_len()];
    conv_forward_into(&g, input.data(), kernels.data(), &mut out);
    Tensor::new(&[g.c_out, g.out_h(), g.out_w()], out)
}

/// Returns `(grad_input, grad_kernels)` for a prior [`conv2d_forward`] call.
pub fn conv2d_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    kernels: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor)> {
    let g = conv_geometry(cached_input, kernels, stride)?;
    let expected = [g.c_out, g.out_h(), g.out_w()];
    if grad_out.shape() != expected {
        return Err(crate::error::shape_err("conv grad_out", grad_out.shape(), &expected));
    }
    let mut gi = vec![0.0; g.input_len()];
    let mut gk = vec![0.0; g.kernel_len()];
    conv_backward_accumulate(
        &g,
        cached_input.data(),
        kernels.data(),
        grad_out.data(),
        Some(&mut gi),
        &mut gk,
    );
    Ok((
        Tensor::new(cached_input.shape(), gi)?,
        Tensor::new(kernels.shape(), gk)?,
    ))
}

/// 2×2 max pooling on one `C×H×W` map. `argmax` receives the flat input index
/// (within the map) of each winner; ties go to the first element in row-major
/// window order.
pub(crate) fn maxpool_forward_into(c: usize, h: usize, w: usize, input: &[f64], out: &mut [f64], argmax: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + (2 * oy) * w + 2 * ox;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

/// Result of [`maxpool2`]: pooled map plus the routing table used by backward.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPoolOutput {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

pub fn maxpool2(input: &Tensor) -> Result<MaxPoolOutput> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("maxpool input must be C×H×W, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool needs even spatial dims, got {h}x{w}")));
    }
    let n_out = c * (h / 2) * (w / 2);
    let mut out = vec![0.0; n_out];
    let mut argmax = vec![0; n_out];
    maxpool_forward_into(c, h, w, input.data(), &mut out, &mut argmax);
    Ok(MaxPoolOutput {
        output: Tensor::new(&[c, h / 2, w / 2], out)?,
        argmax,
    })
}

/// Routes `grad_out` back to the stored winners.
pub fn maxpool2_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool backward: {} gradients for {} windows",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut gi = Tensor::zeros(input_shape);
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        gi.data_mut()[idx] += g;
    }
    Ok(gi)
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("global pooling input must be C×H×W, got {s:?}")));
    }
    let hw = s[1] * s[2];
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|ch| ch.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(&[s[0]], out)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    if input_shape.len() != 3 || grad_out.len() != input_shape[0] {
        return Err(Error::Shape(format!(
            "global pooling backward: grad {:?} for input {input_shape:?}",
            grad_out.shape()
        )));
    }
    let hw = input_shape[1] * input_shape[2];
    let scale = 1.0 / hw as f64;
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| core::iter::repeat_n(g * scale, hw))
        .collect();
    Tensor::new(input_shape, data)
}
