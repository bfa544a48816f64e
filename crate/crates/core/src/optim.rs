//! Plain SGD for the inner loop and Adam for the outer loop.

use serde::{Deserialize, Serialize};

use crate::nets::ParamSet;

pub fn sgd_step(params: &mut ParamSet, grad: &ParamSet, lr: f64) {
    params.axpy(-lr, grad);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments persist across calls.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl Adam {
    pub fn new(like: &ParamSet, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grad: &ParamSet) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let it = params
            .iter_values_mut()
            .zip(grad.iter_values())
            .zip(self.m.iter_values_mut().zip(self.v.iter_values_mut()));
        for ((p, g), (m, v)) in it {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ParamTensor;

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let mut p = ParamSet::new(vec![ParamTensor::new("w", vec![3], vec![1.0, -2.0, 0.5])]);
        let g = ParamSet::new(vec![ParamTensor::new("w", vec![3], vec![0.3, -7.0, 0.0])]);
        let mut adam = Adam::new(&p, AdamConfig::with_lr(0.1));
        adam.step(&mut p, &g);
        let d = &p.tensors[0].data;
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] + 1.9).abs() < 1e-6);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn zero_lr_leaves_params_untouched() {
        let mut p = ParamSet::new(vec![ParamTensor::new("w", vec![2], vec![1.0, 2.0])]);
        let before = p.clone();
        let g = ParamSet::new(vec![ParamTensor::new("w", vec![2], vec![5.0, -5.0])]);
        let mut adam = Adam::new(&p, AdamConfig::with_lr(0.0));
        for _ in 0..3 {
            adam.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }
}
