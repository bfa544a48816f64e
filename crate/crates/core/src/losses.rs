//! Scalar objectives: the L1 LSGAN pair, sum-to-one, kernel pixel loss, and
//! the task / meta composites together with their parameter gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernelgen::Kernel;
use crate::nets::{DiscriminatorCache, DiscriminatorParams, GeneratorParams, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub omega: f64,
    pub eta: f64,
    pub zeta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            omega: 1.0,
            eta: 1.0,
            zeta: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("omega", self.omega), ("eta", self.eta), ("zeta", self.zeta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Subgradient of `|x|` with 0 at the kink.
#[inline]
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn map_len(maps: &[Tensor]) -> Result<usize> {
    let n: usize = maps.iter().map(|m| m.len()).sum();
    if n == 0 {
        Err(Error::Empty("discriminator output map is empty".into()))
    } else {
        Ok(n)
    }
}

fn mean_abs_to(maps: &[Tensor], target: f64) -> Result<f64> {
    let n = map_len(maps)?;
    let s: f64 = maps.iter().flat_map(|m| m.data.iter()).map(|v| (v - target).abs()).sum();
    Ok(s / n as f64)
}

fn mean_abs_grad(maps: &[Tensor], target: f64, scale: f64) -> Vec<Tensor> {
    let n: usize = maps.iter().map(|m| m.len()).sum();
    let c = scale / n as f64;
    maps.iter().map(|m| m.map(|v| c * sgn(v - target))).collect()
}

/// `mean |D(fake) − 1|` over every map entry.
pub fn lsgan_g(d_fake: &[Tensor]) -> Result<f64> {
    mean_abs_to(d_fake, 1.0)
}

/// `½·mean|D(real) − 1| + ½·mean|D(fake)|`.
pub fn lsgan_d(d_real: &[Tensor], d_fake: &[Tensor]) -> Result<f64> {
    Ok(0.5 * mean_abs_to(d_real, 1.0)? + 0.5 * mean_abs_to(d_fake, 0.0)?)
}

/// Sum-to-one loss `|1 − Σk|`.
pub fn sto(k: &Kernel) -> f64 {
    (1.0 - k.sum()).abs()
}

/// Pixel-wise L1 distance `Σ|k̂ − k|`.
pub fn kpix(k_gt: &Kernel, k_est: &Kernel) -> Result<f64> {
    if k_gt.size() != k_est.size() {
        return Err(Error::sizing(format!(
            "kernel sizes differ: {} vs {}",
            k_gt.size(),
            k_est.size()
        )));
    }
    Ok(k_gt.values().iter().zip(k_est.values()).map(|(a, b)| (a - b).abs()).sum())
}

/// A mini-batch of generator inputs and the matching real patches.
#[derive(Debug, Clone)]
pub struct PatchBatch {
    pub g_inputs: Vec<Tensor>,
    pub d_reals: Vec<Tensor>,
}

impl PatchBatch {
    pub fn single(g_input: Tensor, d_real: Tensor) -> Self {
        Self {
            g_inputs: vec![g_input],
            d_reals: vec![d_real],
        }
    }
}

/// Loss values, and gradients when requested, of one composite evaluation.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub l_g: f64,
    pub l_d: f64,
    pub lsgan_g: f64,
    pub sto: f64,
    pub kpix: Option<f64>,
    pub grad_g: Option<ParamSet>,
    pub grad_d: Option<ParamSet>,
    pub real_cache: DiscriminatorCache,
    pub fake_cache: DiscriminatorCache,
}

impl LossEval {
    pub fn is_finite(&self) -> bool {
        self.l_g.is_finite()
            && self.l_d.is_finite()
            && self.grad_g.as_ref().is_none_or(|g| g.all_finite())
            && self.grad_d.as_ref().is_none_or(|g| g.all_finite())
    }
}

/// Evaluates `L_G = ω·kpix(k_gt, DK(θ_G)) + η·lsgan_g + ζ·sto(DK(θ_G))` and
/// `L_D = lsgan_d` with the discriminator in training mode. Each network's
/// gradient treats the other network as constant. `k_gt` is only needed when
/// `ω > 0`.
pub fn composite(
    g: &GeneratorParams,
    d: &DiscriminatorParams,
    batch: &PatchBatch,
    weights: &LossWeights,
    k_gt: Option<&Kernel>,
    with_grad: bool,
) -> Result<LossEval> {
    if batch.g_inputs.is_empty() || batch.g_inputs.len() != batch.d_reals.len() {
        return Err(Error::Empty("patch batch is empty or unpaired".into()));
    }
    let mut fakes = Vec::with_capacity(batch.g_inputs.len());
    let mut g_caches = Vec::with_capacity(batch.g_inputs.len());
    for x in &batch.g_inputs {
        let (y, c) = g.forward_cached(x, false)?;
        fakes.push(y);
        g_caches.push(c);
    }
    let real_cache = d.forward_batch(&batch.d_reals, true)?;
    let fake_cache = d.forward_batch(&fakes, true)?;
    let l_d = lsgan_d(&real_cache.outputs, &fake_cache.outputs)?;
    let adv = lsgan_g(&fake_cache.outputs)?;

    let k = g.derive_kernel();
    let s = k.sum();
    let sto_v = (1.0 - s).abs();
    let kpix_v = match k_gt {
        Some(gt) => Some(kpix(gt, &k)?),
        None if weights.omega > 0.0 => {
            return Err(Error::Config("kernel pixel loss requested without a ground-truth kernel".into()))
        }
        None => None,
    };
    let l_g = weights.omega * kpix_v.unwrap_or(0.0) + weights.eta * adv + weights.zeta * sto_v;

    let (grad_g, grad_d) = if with_grad {
        let gr = mean_abs_grad(&real_cache.outputs, 1.0, 0.5);
        let gf = mean_abs_grad(&fake_cache.outputs, 0.0, 0.5);
        let mut grad_d = d.backward(&real_cache, &gr, false).params;
        grad_d.axpy(1.0, &d.backward(&fake_cache, &gf, false).params);

        let mut grad_g = g.params.zeros_like();
        if weights.eta != 0.0 {
            let ga = mean_abs_grad(&fake_cache.outputs, 1.0, weights.eta);
            let through = d.backward(&fake_cache, &ga, true);
            let dx = through.inputs.expect("input gradients requested");
            for (cache, gx) in g_caches.iter().zip(&dx) {
                grad_g.axpy(1.0, &g.backward(cache, gx));
            }
        }
        let mut gk = vec![-weights.zeta * sgn(1.0 - s); k.values().len()];
        if let (Some(gt), true) = (k_gt, weights.omega != 0.0) {
            for ((gv, e), t) in gk.iter_mut().zip(k.values()).zip(gt.values()) {
                *gv += weights.omega * sgn(e - t);
            }
        }
        if gk.iter().any(|v| *v != 0.0) {
            grad_g.axpy(1.0, &g.derive_kernel_backward(&gk));
        }
        (Some(grad_g), Some(grad_d))
    } else {
        (None, None)
    };
    Ok(LossEval {
        l_g,
        l_d,
        lsgan_g: adv,
        sto: sto_v,
        kpix: kpix_v,
        grad_g,
        grad_d,
        real_cache,
        fake_cache,
    })
}

/// Task-adaptation objectives: `L_G = lsgan_g + ζ·sto`, `L_D = lsgan_d`.
pub fn task_losses(
    g: &GeneratorParams,
    d: &DiscriminatorParams,
    batch: &PatchBatch,
    zeta: f64,
    with_grad: bool,
) -> Result<LossEval> {
    let w = LossWeights {
        omega: 0.0,
        eta: 1.0,
        zeta,
    };
    composite(g, d, batch, &w, None, with_grad)
}

/// Meta-objectives: `L_G = ω·kpix + η·lsgan_g + ζ·sto`, `L_D = lsgan_d`.
pub fn meta_losses(
    g: &GeneratorParams,
    d: &DiscriminatorParams,
    batch: &PatchBatch,
    k_gt: &Kernel,
    weights: &LossWeights,
    with_grad: bool,
) -> Result<LossEval> {
    composite(g, d, batch, weights, Some(k_gt), with_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelgen::Provenance;

    fn map(v: &[f64]) -> Tensor {
        Tensor::from_vec(1, 1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn lsgan_examples() {
        assert_eq!(lsgan_g(&[map(&[1.0, 1.0])]).unwrap(), 0.0);
        assert_eq!(lsgan_g(&[map(&[0.0, 0.0])]).unwrap(), 1.0);
        assert_eq!(lsgan_g(&[map(&[0.25, 0.75])]).unwrap(), 0.5);
        assert_eq!(lsgan_d(&[map(&[1.0])], &[map(&[0.0])]).unwrap(), 0.0);
        assert_eq!(lsgan_d(&[map(&[0.0])], &[map(&[1.0])]).unwrap(), 1.0);
        assert_eq!(lsgan_d(&[map(&[0.5])], &[map(&[0.5])]).unwrap(), 0.5);
        assert!(lsgan_g(&[]).is_err());
    }

    #[test]
    fn sto_and_kpix_examples() {
        let d = Kernel::delta(11, 2).unwrap();
        assert_eq!(sto(&d), 0.0);
        let z = Kernel::new(11, 2, Provenance::Estimated, vec![0.0; 121]).unwrap();
        assert_eq!(sto(&z), 1.0);
        let mut v = vec![0.0; 121];
        v[0] = 1.5;
        let h = Kernel::new(11, 2, Provenance::Estimated, v).unwrap();
        assert_eq!(sto(&h), 0.5);

        let mut v = vec![0.0; 121];
        v[61] = 1.0;
        let shifted = Kernel::new(11, 2, Provenance::Sampled, v).unwrap();
        assert_eq!(kpix(&d, &shifted).unwrap(), 2.0);
        assert_eq!(kpix(&shifted, &d).unwrap(), 2.0);
        assert_eq!(kpix(&d, &d).unwrap(), 0.0);
        assert!(kpix(&d, &Kernel::delta(21, 4).unwrap()).is_err());
    }
}
