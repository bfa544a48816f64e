//! Fully convolutional patch discriminator.
//!
//! Seven layers with kernel sizes `[7,1,1,1,1,1,1]`. Every convolution is
//! spectrally normalized; layers 1–6 are followed by batch norm and ReLU, the
//! last one carries a bias and a sigmoid. The output is a realness map whose
//! side is the input side minus 6.
//!
//! Spectral normalization keeps one power-iteration pair `(u, v)` per layer.
//! The forward pass treats `(u, v)` as constants, so the weight gradient is the
//! usual `gW = G/σ − (⟨G, W⟩/σ²)·u vᵀ` where `G` is the gradient with respect
//! to the normalized weight.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::conv::{self, ConvShape};
use super::params::{ParamSet, ParamTensor};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const KERNEL_SIZES: [usize; 7] = [7, 1, 1, 1, 1, 1, 1];
pub const LAYERS: usize = 7;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Power iterations run once at initialization.
const INIT_POWER_ITERS: usize = 15;
const SN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { width: 64 }
    }
}

/// Discriminator weights plus its non-trainable state.
///
/// `params` order: seven conv weights, then `(gamma, beta)` for each of the six
/// batch norms, then the final conv bias. `buffers` order: `(sn_u, sn_v)` for
/// each conv, then `(running_mean, running_var)` for each batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub width: usize,
    pub params: ParamSet,
    pub buffers: ParamSet,
}

pub fn layer_shapes(width: usize) -> [ConvShape; LAYERS] {
    let mut shapes = [ConvShape {
        in_c: width,
        out_c: width,
        k: 1,
        stride: 1,
    }; LAYERS];
    shapes[0].in_c = 1;
    shapes[0].k = KERNEL_SIZES[0];
    shapes[LAYERS - 1].out_c = 1;
    shapes
}

const fn gamma_idx(l: usize) -> usize {
    LAYERS + 2 * l
}
const fn beta_idx(l: usize) -> usize {
    LAYERS + 2 * l + 1
}
const BIAS_IDX: usize = LAYERS + 2 * (LAYERS - 1);

const fn u_idx(l: usize) -> usize {
    2 * l
}
const fn v_idx(l: usize) -> usize {
    2 * l + 1
}
const fn rmean_idx(l: usize) -> usize {
    2 * LAYERS + 2 * l
}
const fn rvar_idx(l: usize) -> usize {
    2 * LAYERS + 2 * l + 1
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d = n.max(SN_EPS);
    v.iter_mut().for_each(|x| *x /= d);
}

/// `W v` for `W` viewed as `rows × cols`.
fn mat_vec(w: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `Wᵀ u` for `W` viewed as `rows × cols`.
fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let ur = u[r];
        for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += ur * a;
        }
    }
    out
}

/// One power-iteration step: `v ← Wᵀu/‖·‖`, `u ← Wv/‖·‖`.
pub fn power_iteration(w: &[f64], rows: usize, cols: usize, u: &mut Vec<f64>, v: &mut Vec<f64>) {
    let mut nv = mat_t_vec(w, rows, cols, u);
    normalize(&mut nv);
    let mut nu = mat_vec(w, rows, cols, &nv);
    normalize(&mut nu);
    *u = nu;
    *v = nv;
}

/// `σ = uᵀ W v`.
pub fn sigma_estimate(w: &[f64], rows: usize, cols: usize, u: &[f64], v: &[f64]) -> f64 {
    mat_vec(w, rows, cols, v).iter().zip(u).map(|(a, b)| a * b).sum()
}

pub fn init_discriminator(config: &DiscriminatorConfig, rng_seed: u64) -> Result<DiscriminatorParams> {
    if config.width == 0 {
        return Err(Error::Config("discriminator width must be positive".into()));
    }
    let w = config.width;
    let shapes = layer_shapes(w);
    let mut rng = rng::seeded(rng_seed);
    let mut params = Vec::new();
    for (l, s) in shapes.iter().enumerate() {
        let std = (2.0 / s.row_len() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..s.weight_len()).map(|_| normal.sample(&mut rng)).collect();
        params.push(ParamTensor::new(
            format!("discriminator.conv{}.weight", l + 1),
            vec![s.out_c, s.in_c, s.k, s.k],
            data,
        ));
    }
    for l in 0..LAYERS - 1 {
        params.push(ParamTensor::new(
            format!("discriminator.bn{}.weight", l + 1),
            vec![w],
            vec![1.0; w],
        ));
        params.push(ParamTensor::zeros(format!("discriminator.bn{}.bias", l + 1), vec![w]));
    }
    params.push(ParamTensor::zeros(format!("discriminator.conv{LAYERS}.bias"), vec![1]));

    let mut buffers = Vec::new();
    for (l, s) in shapes.iter().enumerate() {
        let mut u: Vec<f64> = (0..s.out_c).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut u);
        let mut v = vec![0.0; s.row_len()];
        let wdata = &params[l].data;
        for _ in 0..INIT_POWER_ITERS {
            power_iteration(wdata, s.out_c, s.row_len(), &mut u, &mut v);
        }
        buffers.push(ParamTensor::new(format!("discriminator.conv{}.sn_u", l + 1), vec![s.out_c], u));
        buffers.push(ParamTensor::new(
            format!("discriminator.conv{}.sn_v", l + 1),
            vec![s.row_len()],
            v,
        ));
    }
    for l in 0..LAYERS - 1 {
        buffers.push(ParamTensor::zeros(format!("discriminator.bn{}.running_mean", l + 1), vec![w]));
        buffers.push(ParamTensor::new(
            format!("discriminator.bn{}.running_var", l + 1),
            vec![w],
            vec![1.0; w],
        ));
    }
    Ok(DiscriminatorParams {
        width: w,
        params: ParamSet::new(params),
        buffers: ParamSet::new(buffers),
    })
}

/// Everything the backward pass needs from one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct DiscriminatorCache {
    train_mode: bool,
    sigmas: Vec<f64>,
    w_sn: Vec<Vec<f64>>,
    /// `[layer][sample]` conv inputs; entry 0 is the patch itself.
    inputs: Vec<Vec<Tensor>>,
    /// `[layer][sample]` normalized pre-affine activations of the six BN layers.
    xhat: Vec<Vec<Tensor>>,
    /// `[layer][channel]` 1/sqrt(var + eps) used by BN.
    inv_std: Vec<Vec<f64>>,
    batch_mean: Vec<Vec<f64>>,
    batch_var: Vec<Vec<f64>>,
    count: usize,
    pub outputs: Vec<Tensor>,
}

pub struct DiscriminatorGrads {
    pub params: ParamSet,
    /// Gradient with respect to each input patch, when requested.
    pub inputs: Option<Vec<Tensor>>,
}

impl DiscriminatorParams {
    pub fn from_parts(width: usize, params: ParamSet, buffers: ParamSet) -> Result<Self> {
        let reference = init_discriminator(&DiscriminatorConfig { width }, 0)?;
        let same_layout = |a: &ParamSet, b: &ParamSet| {
            a.tensors.len() == b.tensors.len()
                && a.tensors.iter().zip(&b.tensors).all(|(x, y)| x.shape == y.shape && x.data.len() == y.data.len())
        };
        if !same_layout(&params, &reference.params) || !same_layout(&buffers, &reference.buffers) {
            return Err(Error::Config(format!(
                "discriminator tensors do not match width {width}"
            )));
        }
        Ok(Self {
            width,
            params,
            buffers,
        })
    }

    pub fn shapes(&self) -> [ConvShape; LAYERS] {
        layer_shapes(self.width)
    }

    /// One power-iteration step per layer, as done at the start of each
    /// training-mode forward.
    pub fn refresh_spectral(&mut self) {
        for (l, s) in self.shapes().iter().enumerate() {
            let mut u = std::mem::take(&mut self.buffers.tensors[u_idx(l)].data);
            let mut v = std::mem::take(&mut self.buffers.tensors[v_idx(l)].data);
            power_iteration(&self.params.tensors[l].data, s.out_c, s.row_len(), &mut u, &mut v);
            self.buffers.tensors[u_idx(l)].data = u;
            self.buffers.tensors[v_idx(l)].data = v;
        }
    }

    /// Current spectral-norm estimate of each conv weight.
    pub fn sigmas(&self) -> Vec<f64> {
        self.shapes()
            .iter()
            .enumerate()
            .map(|(l, s)| {
                sigma_estimate(
                    &self.params.tensors[l].data,
                    s.out_c,
                    s.row_len(),
                    &self.buffers.tensors[u_idx(l)].data,
                    &self.buffers.tensors[v_idx(l)].data,
                )
            })
            .collect()
    }

    pub fn normalized_weight(&self, l: usize) -> Vec<f64> {
        let sigma = self.sigmas()[l];
        self.params.tensors[l].data.iter().map(|w| w / sigma).collect()
    }

    /// Pure forward over a batch of equally sized single-channel patches.
    /// Spectral-norm vectors and running statistics are read, never written.
    pub fn forward_batch(&self, batch: &[Tensor], train_mode: bool) -> Result<DiscriminatorCache> {
        let first = batch
            .first()
            .ok_or_else(|| Error::Empty("discriminator batch is empty".into()))?;
        let (h, w) = (first.height, first.width);
        for p in batch {
            if p.channels != 1 {
                return Err(Error::sizing(format!(
                    "discriminator consumes single-channel patches, got {} channels",
                    p.channels
                )));
            }
            if (p.height, p.width) != (h, w) {
                return Err(Error::sizing("discriminator batch patches differ in size"));
            }
        }
        if h < KERNEL_SIZES[0] || w < KERNEL_SIZES[0] {
            return Err(Error::sizing(format!(
                "patch {h}x{w} smaller than the discriminator's 7x7 first layer"
            )));
        }
        let shapes = self.shapes();
        let sigmas = self.sigmas();
        let w_sn: Vec<Vec<f64>> = (0..LAYERS)
            .map(|l| self.params.tensors[l].data.iter().map(|x| x / sigmas[l]).collect())
            .collect();
        let n = batch.len();
        let plane = (h - 6) * (w - 6);
        let count = n * plane;

        let mut inputs: Vec<Vec<Tensor>> = Vec::with_capacity(LAYERS);
        let mut xhat = Vec::with_capacity(LAYERS - 1);
        let mut inv_std = Vec::with_capacity(LAYERS - 1);
        let mut batch_mean = Vec::with_capacity(LAYERS - 1);
        let mut batch_var = Vec::with_capacity(LAYERS - 1);
        let mut cur: Vec<Tensor> = batch.to_vec();

        for l in 0..LAYERS - 1 {
            let z: Vec<Tensor> = cur
                .iter()
                .map(|x| conv::forward(&shapes[l], &w_sn[l], x))
                .collect::<Result<_>>()?;
            let c = shapes[l].out_c;
            let (mean, var) = if train_mode {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let s: f64 = z.iter().map(|t| t.plane(ch).iter().sum::<f64>()).sum();
                    let m = s / count as f64;
                    let ss: f64 = z
                        .iter()
                        .map(|t| t.plane(ch).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                        .sum();
                    mean[ch] = m;
                    var[ch] = ss / count as f64;
                }
                (mean, var)
            } else {
                (
                    self.buffers.tensors[rmean_idx(l)].data.clone(),
                    self.buffers.tensors[rvar_idx(l)].data.clone(),
                )
            };
            let istd: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let gamma = &self.params.tensors[gamma_idx(l)].data;
            let beta = &self.params.tensors[beta_idx(l)].data;
            let mut xh_layer = Vec::with_capacity(n);
            let mut next = Vec::with_capacity(n);
            for t in &z {
                let mut xh = t.clone();
                let mut a = t.clone();
                for ch in 0..c {
                    let (m, is, g, b) = (mean[ch], istd[ch], gamma[ch], beta[ch]);
                    for (xv, av) in xh.plane_mut(ch).iter_mut().zip(a.plane_mut(ch)) {
                        let nv = (*xv - m) * is;
                        *xv = nv;
                        *av = (g * nv + b).max(0.0);
                    }
                }
                xh_layer.push(xh);
                next.push(a);
            }
            inputs.push(cur);
            xhat.push(xh_layer);
            inv_std.push(istd);
            batch_mean.push(mean);
            batch_var.push(var);
            cur = next;
        }
        let bias = self.params.tensors[BIAS_IDX].data[0];
        let outputs: Vec<Tensor> = cur
            .iter()
            .map(|x| {
                conv::forward(&shapes[LAYERS - 1], &w_sn[LAYERS - 1], x)
                    .map(|z| z.map(|v| sigmoid(v + bias)))
            })
            .collect::<Result<_>>()?;
        inputs.push(cur);
        Ok(DiscriminatorCache {
            train_mode,
            sigmas,
            w_sn,
            inputs,
            xhat,
            inv_std,
            batch_mean,
            batch_var,
            count,
            outputs,
        })
    }

    /// Folds the batch statistics of a training-mode forward into the running
    /// statistics (momentum 0.1, unbiased variance).
    pub fn commit_running_stats(&mut self, cache: &DiscriminatorCache) {
        if !cache.train_mode {
            return;
        }
        let correction = if cache.count > 1 {
            cache.count as f64 / (cache.count - 1) as f64
        } else {
            1.0
        };
        for l in 0..LAYERS - 1 {
            let rm = &mut self.buffers.tensors[rmean_idx(l)].data;
            for (r, m) in rm.iter_mut().zip(&cache.batch_mean[l]) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let rv = &mut self.buffers.tensors[rvar_idx(l)].data;
            for (r, v) in rv.iter_mut().zip(&cache.batch_var[l]) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction;
            }
        }
    }

    /// Backpropagates `grad_out` (one map per batch sample, gradient with
    /// respect to the sigmoid outputs).
    pub fn backward(
        &self,
        cache: &DiscriminatorCache,
        grad_out: &[Tensor],
        want_input_grad: bool,
    ) -> DiscriminatorGrads {
        let shapes = self.shapes();
        let n = cache.outputs.len();
        assert_eq!(grad_out.len(), n, "one output gradient per batch sample");
        let mut grads = self.params.zeros_like();
        let mut gw_sn: Vec<Vec<f64>> = shapes.iter().map(|s| vec![0.0; s.weight_len()]).collect();

        // Sigmoid + bias of the last layer.
        let dz: Vec<Tensor> = cache
            .outputs
            .iter()
            .zip(grad_out)
            .map(|(y, g)| {
                let mut d = g.clone();
                for (dv, yv) in d.data.iter_mut().zip(&y.data) {
                    *dv *= yv * (1.0 - yv);
                }
                d
            })
            .collect();
        grads.tensors[BIAS_IDX].data[0] = dz.iter().map(|t| t.data.iter().sum::<f64>()).sum();
        let last = LAYERS - 1;
        let mut da: Vec<Tensor> = Vec::with_capacity(n);
        for (x, g) in cache.inputs[last].iter().zip(&dz) {
            accumulate(&mut gw_sn[last], &conv::backward_weight(&shapes[last], 1, x, g));
            da.push(conv::backward_input(&shapes[last], 1, &cache.w_sn[last], g, x.height, x.width));
        }

        let mut input_grads = None;
        for l in (0..LAYERS - 1).rev() {
            let c = shapes[l].out_c;
            let gamma = &self.params.tensors[gamma_idx(l)].data;
            // ReLU mask: the activation fed to layer l+1 is positive where it passed.
            for (d, a) in da.iter_mut().zip(&cache.inputs[l + 1]) {
                for (dv, av) in d.data.iter_mut().zip(&a.data) {
                    if *av <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for (d, xh) in da.iter().zip(&cache.xhat[l]) {
                for ch in 0..c {
                    for (dv, xv) in d.plane(ch).iter().zip(xh.plane(ch)) {
                        dbeta[ch] += dv;
                        dgamma[ch] += dv * xv;
                    }
                }
            }
            let m = cache.count as f64;
            let mut dzs = Vec::with_capacity(n);
            for (d, xh) in da.iter().zip(&cache.xhat[l]) {
                let mut dzt = d.clone();
                for ch in 0..c {
                    let scale = gamma[ch] * cache.inv_std[l][ch];
                    let plane = dzt.plane_mut(ch);
                    if cache.train_mode {
                        let (sb, sg) = (dbeta[ch] / m, dgamma[ch] / m);
                        for (zv, xv) in plane.iter_mut().zip(xh.plane(ch)) {
                            *zv = scale * (*zv - sb - xv * sg);
                        }
                    } else {
                        plane.iter_mut().for_each(|zv| *zv *= scale);
                    }
                }
                dzs.push(dzt);
            }
            grads.tensors[gamma_idx(l)].data = dgamma;
            grads.tensors[beta_idx(l)].data = dbeta;

            let mut next = Vec::with_capacity(n);
            for (x, g) in cache.inputs[l].iter().zip(&dzs) {
                accumulate(&mut gw_sn[l], &conv::backward_weight(&shapes[l], 1, x, g));
                if l > 0 || want_input_grad {
                    next.push(conv::backward_input(&shapes[l], 1, &cache.w_sn[l], g, x.height, x.width));
                }
            }
            if l == 0 {
                if want_input_grad {
                    input_grads = Some(next);
                }
                break;
            }
            da = next;
        }

        // Through the spectral normalization.
        for (l, s) in shapes.iter().enumerate() {
            let sigma = cache.sigmas[l];
            let w = &self.params.tensors[l].data;
            let g = &gw_sn[l];
            let inner: f64 = g.iter().zip(w).map(|(a, b)| a * b).sum();
            let coef = inner / (sigma * sigma);
            let u = &self.buffers.tensors[u_idx(l)].data;
            let v = &self.buffers.tensors[v_idx(l)].data;
            let cols = s.row_len();
            let out = &mut grads.tensors[l].data;
            for r in 0..s.out_c {
                for cidx in 0..cols {
                    let i = r * cols + cidx;
                    out[i] = g[i] / sigma - coef * u[r] * v[cidx];
                }
            }
        }
        DiscriminatorGrads {
            params: grads,
            inputs: input_grads,
        }
    }
}

fn accumulate(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single-patch forward with the stateful bookkeeping of a training step:
/// in train mode the spectral vectors are refreshed first and the running
/// statistics updated afterwards.
pub fn forward_discriminator(p: &mut DiscriminatorParams, patch: &Tensor, train_mode: bool) -> Result<Tensor> {
    if train_mode {
        p.refresh_spectral();
    }
    let cache = p.forward_batch(std::slice::from_ref(patch), train_mode)?;
    p.commit_running_stats(&cache);
    Ok(cache.outputs.into_iter().next().expect("one output"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_patch(n: usize, seed: u64) -> Tensor {
        let mut r = rng::seeded(seed);
        let mut t = Tensor::zeros(1, n, n);
        for v in t.data.iter_mut() {
            *v = r.random::<f64>();
        }
        t
    }

    #[test]
    fn output_shape_and_range() {
        let mut d = init_discriminator(&DiscriminatorConfig { width: 8 }, 3).unwrap();
        let out = forward_discriminator(&mut d, &noise_patch(32, 1), true).unwrap();
        assert_eq!(out.shape(), (1, 26, 26));
        assert!(out.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let d = init_discriminator(&DiscriminatorConfig { width: 6 }, 4).unwrap();
        let x = noise_patch(20, 2);
        let a = d.forward_batch(std::slice::from_ref(&x), false).unwrap();
        let b = d.forward_batch(std::slice::from_ref(&x), false).unwrap();
        assert_eq!(a.outputs, b.outputs);
    }

    #[test]
    fn init_reproducible() {
        let a = init_discriminator(&DiscriminatorConfig { width: 5 }, 11).unwrap();
        let b = init_discriminator(&DiscriminatorConfig { width: 5 }, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_small_patch_rejected() {
        let d = init_discriminator(&DiscriminatorConfig { width: 4 }, 0).unwrap();
        assert!(d.forward_batch(&[Tensor::zeros(1, 6, 9)], true).is_err());
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut d = init_discriminator(&DiscriminatorConfig { width: 4 }, 0).unwrap();
        let before = d.buffers.tensors[rmean_idx(0)].data.clone();
        forward_discriminator(&mut d, &noise_patch(16, 5), true).unwrap();
        assert_ne!(before, d.buffers.tensors[rmean_idx(0)].data);
    }
}
