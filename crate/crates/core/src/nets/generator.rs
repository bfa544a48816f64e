//! Deep linear generator: six bias-free convolutions, no activations, the last
//! one strided. Its composition is a single 11×11 filter followed by ×2
//! subsampling, which [`GeneratorParams::derive_kernel`] reads out explicitly.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::conv::{self, ConvShape};
use super::params::{ParamSet, ParamTensor};
use crate::error::{Error, Result};
use crate::kernelgen::{Kernel, Provenance, X2_KERNEL_SIZE};
use crate::rng;
use crate::tensor::Tensor;

pub const KERNEL_SIZES: [usize; 6] = [7, 3, 3, 1, 1, 1];
pub const STRIDES: [usize; 6] = [1, 1, 1, 1, 1, 2];
/// Receptive field of the composed stack.
pub const RECEPTIVE_FIELD: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Hidden channel count.
    pub width: usize,
    /// Standard deviation of the init noise, divided by `sqrt(fan_in)` per layer.
    pub init_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            width: 64,
            init_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub width: usize,
    pub params: ParamSet,
}

/// Layer inputs recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct GeneratorCache {
    inputs: Vec<Tensor>,
    unit_stride: bool,
}

pub fn layer_shapes(width: usize) -> [ConvShape; 6] {
    let chans = [1, width, width, width, width, width, 1];
    let mut shapes = [ConvShape {
        in_c: 0,
        out_c: 0,
        k: 0,
        stride: 0,
    }; 6];
    for l in 0..6 {
        shapes[l] = ConvShape {
            in_c: chans[l],
            out_c: chans[l + 1],
            k: KERNEL_SIZES[l],
            stride: STRIDES[l],
        };
    }
    shapes
}

pub fn layer_name(l: usize) -> String {
    format!("generator.conv{}.weight", l + 1)
}

/// Output side length for an input side length `n`.
pub fn output_dim(n: usize) -> Option<usize> {
    if n < RECEPTIVE_FIELD {
        None
    } else {
        Some((n - RECEPTIVE_FIELD) / 2 + 1)
    }
}

/// Delta-plus-noise initialization: every channel path carries a centered
/// impulse and the last layer averages the paths, so with zero noise the
/// decoded kernel is an exact delta.
pub fn init_generator(scale: usize, config: &GeneratorConfig, rng_seed: u64) -> Result<GeneratorParams> {
    if scale != 2 {
        return Err(Error::UnsupportedScale(scale));
    }
    if config.width == 0 {
        return Err(Error::Config("generator width must be positive".into()));
    }
    let w = config.width;
    let mut rng = rng::seeded(rng_seed);
    let mut tensors = Vec::with_capacity(6);
    for (l, shape) in layer_shapes(w).iter().enumerate() {
        let k = shape.k;
        let c = k / 2;
        let mut data = vec![0.0; shape.weight_len()];
        for o in 0..shape.out_c {
            for i in 0..shape.in_c {
                let val = match l {
                    0 => 1.0,
                    5 => 1.0 / w as f64,
                    _ if o == i => 1.0,
                    _ => 0.0,
                };
                data[((o * shape.in_c + i) * k + c) * k + c] = val;
            }
        }
        if config.init_noise > 0.0 {
            let std = config.init_noise / (shape.row_len() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in data.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        tensors.push(ParamTensor::new(
            layer_name(l),
            vec![shape.out_c, shape.in_c, k, k],
            data,
        ));
    }
    Ok(GeneratorParams {
        width: w,
        params: ParamSet::new(tensors),
    })
}

impl GeneratorParams {
    pub fn from_params(width: usize, params: ParamSet) -> Result<Self> {
        let shapes = layer_shapes(width);
        if params.tensors.len() != 6 {
            return Err(Error::Config(format!(
                "generator needs 6 weight tensors, got {}",
                params.tensors.len()
            )));
        }
        for (t, s) in params.tensors.iter().zip(shapes.iter()) {
            if t.data.len() != s.weight_len() {
                return Err(Error::Config(format!("tensor {} has the wrong size", t.name)));
            }
        }
        Ok(Self { width, params })
    }

    pub fn shapes(&self) -> [ConvShape; 6] {
        layer_shapes(self.width)
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        &self.params.tensors[l].data
    }

    pub fn forward(&self, patch: &Tensor) -> Result<Tensor> {
        self.forward_cached(patch, false).map(|(out, _)| out)
    }

    /// Runs the stack, recording layer inputs. With `unit_stride` every layer
    /// uses stride 1.
    pub fn forward_cached(&self, patch: &Tensor, unit_stride: bool) -> Result<(Tensor, GeneratorCache)> {
        if patch.channels != 1 {
            return Err(Error::sizing(format!(
                "generator consumes single-channel patches, got {} channels",
                patch.channels
            )));
        }
        if patch.height < RECEPTIVE_FIELD || patch.width < RECEPTIVE_FIELD {
            return Err(Error::sizing(format!(
                "patch {}x{} smaller than the generator receptive field {RECEPTIVE_FIELD}",
                patch.height, patch.width
            )));
        }
        let mut inputs = Vec::with_capacity(6);
        let mut x = patch.clone();
        for (l, shape) in self.shapes().iter().enumerate() {
            let stride = if unit_stride { 1 } else { shape.stride };
            let y = conv::forward_with_stride(shape, stride, self.weight(l), &x)?;
            inputs.push(x);
            x = y;
        }
        Ok((x, GeneratorCache { inputs, unit_stride }))
    }

    /// Parameter gradient of `<grad_out, G(x)>`.
    pub fn backward(&self, cache: &GeneratorCache, grad_out: &Tensor) -> ParamSet {
        let shapes = self.shapes();
        let mut grads = self.params.zeros_like();
        let mut g = grad_out.clone();
        for l in (0..6).rev() {
            let shape = &shapes[l];
            let stride = if cache.unit_stride { 1 } else { shape.stride };
            let input = &cache.inputs[l];
            grads.tensors[l].data = conv::backward_weight(shape, stride, input, &g);
            if l > 0 {
                g = conv::backward_input(shape, stride, self.weight(l), &g, input.height, input.width);
            }
        }
        grads
    }

    /// Reads out the effective kernel: the stride-1 stack applied to a
    /// `(2m-1)×(2m-1)` impulse. No normalization is applied.
    pub fn derive_kernel(&self) -> Kernel {
        let (out, _) = self.derive_kernel_cached();
        out
    }

    fn impulse() -> Tensor {
        let n = 2 * X2_KERNEL_SIZE - 1;
        let mut j = Tensor::zeros(1, n, n);
        *j.at_mut(0, n / 2, n / 2) = 1.0;
        j
    }

    pub(crate) fn derive_kernel_cached(&self) -> (Kernel, GeneratorCache) {
        let (out, cache) = self
            .forward_cached(&Self::impulse(), true)
            .expect("impulse input always fits the receptive field");
        debug_assert_eq!(out.shape(), (1, X2_KERNEL_SIZE, X2_KERNEL_SIZE));
        let k = Kernel::new(X2_KERNEL_SIZE, 2, Provenance::Estimated, out.data)
            .expect("11x11 output");
        (k, cache)
    }

    /// Parameter gradient of `Σ grad_kernel ⊙ derive_kernel()`.
    pub fn derive_kernel_backward(&self, grad_kernel: &[f64]) -> ParamSet {
        let (_, cache) = self.derive_kernel_cached();
        let g = Tensor::from_vec(1, X2_KERNEL_SIZE, X2_KERNEL_SIZE, grad_kernel.to_vec())
            .expect("kernel-sized gradient");
        self.backward(&cache, &g)
    }
}

/// Convenience wrapper for a single forward pass.
pub fn forward_generator(p: &GeneratorParams, patch: &Tensor) -> Result<Tensor> {
    p.forward(patch)
}

pub fn derive_kernel(p: &GeneratorParams) -> Kernel {
    p.derive_kernel()
}
