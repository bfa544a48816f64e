//! Valid (unpadded) 2-D cross-correlation with square kernels, and its adjoints.
//!
//! Weights are laid out `[out][in][ky][kx]`.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    pub fn output_dim(&self, input: usize) -> Option<usize> {
        if input < self.k {
            None
        } else {
            Some((input - self.k) / self.stride + 1)
        }
    }

    /// Weights as an `out_c × (in_c·k·k)` matrix row stride.
    pub fn row_len(&self) -> usize {
        self.in_c * self.k * self.k
    }
}

pub fn forward(shape: &ConvShape, weight: &[f64], input: &Tensor) -> Result<Tensor> {
    forward_with_stride(shape, shape.stride, weight, input)
}

/// Same as [`forward`] but with the stride overridden (used to read out the
/// generator's effective kernel with all strides set to one).
pub fn forward_with_stride(
    shape: &ConvShape,
    stride: usize,
    weight: &[f64],
    input: &Tensor,
) -> Result<Tensor> {
    debug_assert_eq!(weight.len(), shape.weight_len());
    if input.channels != shape.in_c {
        return Err(Error::sizing(format!(
            "conv expects {} input channels, got {}",
            shape.in_c, input.channels
        )));
    }
    if input.height < shape.k || input.width < shape.k {
        return Err(Error::sizing(format!(
            "input {}x{} smaller than kernel {}",
            input.height, input.width, shape.k
        )));
    }
    let k = shape.k;
    let oh = (input.height - k) / stride + 1;
    let ow = (input.width - k) / stride + 1;
    let iw = input.width;
    let plane = oh * ow;
    let mut out = Tensor::zeros(shape.out_c, oh, ow);
    let work = shape.weight_len() * plane;
    parallel::for_each_chunk_mut(&mut out.data, plane, work, |o, dst| {
        let wrow = &weight[o * shape.row_len()..(o + 1) * shape.row_len()];
        for i in 0..shape.in_c {
            let src = input.plane(i);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wrow[(i * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let drow = &mut dst[y * ow..(y + 1) * ow];
                        let base = (y * stride + ky) * iw + kx;
                        if stride == 1 {
                            let srow = &src[base..base + ow];
                            for (d, s) in drow.iter_mut().zip(srow) {
                                *d += wv * s;
                            }
                        } else {
                            for (x, d) in drow.iter_mut().enumerate() {
                                *d += wv * src[base + x * stride];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradient with respect to the weights.
pub fn backward_weight(shape: &ConvShape, stride: usize, input: &Tensor, grad_out: &Tensor) -> Vec<f64> {
    let k = shape.k;
    let (oh, ow) = (grad_out.height, grad_out.width);
    let iw = input.width;
    let mut gw = vec![0.0; shape.weight_len()];
    let work = shape.weight_len() * oh * ow;
    parallel::for_each_chunk_mut(&mut gw, shape.row_len(), work, |o, grow| {
        let g = grad_out.plane(o);
        for i in 0..shape.in_c {
            let src = input.plane(i);
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let grow_ = &g[y * ow..(y + 1) * ow];
                        let base = (y * stride + ky) * iw + kx;
                        if stride == 1 {
                            let srow = &src[base..base + ow];
                            for (a, b) in grow_.iter().zip(srow) {
                                acc += a * b;
                            }
                        } else {
                            for (x, a) in grow_.iter().enumerate() {
                                acc += a * src[base + x * stride];
                            }
                        }
                    }
                    grow[(i * k + ky) * k + kx] = acc;
                }
            }
        }
    });
    gw
}

/// Gradient with respect to the input, for an input of size `in_h × in_w`.
pub fn backward_input(
    shape: &ConvShape,
    stride: usize,
    weight: &[f64],
    grad_out: &Tensor,
    in_h: usize,
    in_w: usize,
) -> Tensor {
    let k = shape.k;
    let (oh, ow) = (grad_out.height, grad_out.width);
    let mut gin = Tensor::zeros(shape.in_c, in_h, in_w);
    let work = shape.weight_len() * oh * ow;
    parallel::for_each_chunk_mut(&mut gin.data, in_h * in_w, work, |i, dst| {
        for o in 0..shape.out_c {
            let g = grad_out.plane(o);
            let wrow = &weight[o * shape.row_len()..(o + 1) * shape.row_len()];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wrow[(i * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let grow = &g[y * ow..(y + 1) * ow];
                        let base = (y * stride + ky) * in_w + kx;
                        if stride == 1 {
                            let drow = &mut dst[base..base + ow];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        } else {
                            for (x, gv) in grow.iter().enumerate() {
                                dst[base + x * stride] += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    });
    gin
}
