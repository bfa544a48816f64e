#![allow(dead_code)]

use metakernel::nets::ParamSet;
use metakernel::rng;
use metakernel::tensor::Tensor;
use rand::Rng;

pub fn noise_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let mut t = Tensor::zeros(c, h, w);
    for v in t.data.iter_mut() {
        *v = r.random::<f64>();
    }
    t
}

/// Smooth random texture in [0,1]: a few random sinusoids plus noise.
pub fn texture(h: usize, w: usize, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let waves: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| (r.random_range(-0.9..0.9), r.random_range(-0.9..0.9), r.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let mut t = Tensor::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for (fy, fx, ph) in &waves {
                v += (fy * y as f64 + fx * x as f64 + ph).sin();
            }
            *t.at_mut(0, y, x) = 0.5 + 0.08 * v + 0.05 * r.random::<f64>();
        }
    }
    t
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates whose `h` stencil straddled a kink and matched at a smaller step.
    pub refined: usize,
    /// Coordinates sitting on a kink at every tried step.
    pub skipped: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl FdReport {
    pub fn passed(&self, max_skip_frac: f64) -> bool {
        self.failures.is_empty()
            && self.checked > 0
            && (self.skipped as f64) <= max_skip_frac * (self.checked + self.skipped) as f64
    }
}

/// Central differences with step `h` on every coordinate of `theta`.
///
/// A coordinate matches when the analytic and numeric values agree within
/// `rel_tol` relative error or within `abs_floor` absolute error. When the
/// `h` stencil disagrees, the step is halved up to eight times: piecewise-linear
/// terms (ReLU, |·|) make the `h` estimate wrong whenever a kink lies within
/// `h` of the point. A coordinate whose estimates keep changing with the step
/// is on a kink and is skipped; one whose estimates have converged to a value
/// different from the analytic gradient is a failure.
pub fn fd_check<F>(theta: &ParamSet, analytic: &ParamSet, h: f64, rel_tol: f64, abs_floor: f64, f: F) -> FdReport
where
    F: Fn(&ParamSet) -> f64,
{
    let mut rep = FdReport::default();
    let mut p = theta.clone();
    let central = |p: &mut ParamSet, i: usize, step: f64| {
        let x0 = theta.value_at(i);
        p.set_at(i, x0 + step);
        let fp = f(p);
        p.set_at(i, x0 - step);
        let fm = f(p);
        p.set_at(i, x0);
        (fp - fm) / (2.0 * step)
    };
    let close = |a: f64, b: f64| {
        let err = (a - b).abs();
        err <= rel_tol * a.abs().max(b.abs()) || err <= abs_floor
    };
    for i in 0..theta.numel() {
        let a = analytic.value_at(i);
        let mut step = h;
        let mut prev = central(&mut p, i, step);
        let first = prev;
        let mut matched = close(a, prev);
        let mut converged = false;
        for _ in 0..8 {
            if matched {
                break;
            }
            step /= 2.0;
            let n = central(&mut p, i, step);
            matched = close(a, n);
            converged = close(prev, n);
            prev = n;
        }
        if matched {
            rep.checked += 1;
            if step < h {
                rep.refined += 1;
            }
            // Matches inside the absolute floor say nothing about relative error.
            let scale = a.abs().max(prev.abs());
            if (a - prev).abs() > abs_floor {
                rep.worst_rel = rep.worst_rel.max((a - prev).abs() / scale);
            }
        } else if !converged {
            rep.skipped += 1;
        } else {
            rep.checked += 1;
            let (ti, off) = theta.locate(i).unwrap();
            rep.failures.push(format!(
                "{}[{off}]: analytic {a:.6e} numeric {first:.6e} (h) {prev:.6e} (h/256)",
                theta.tensors[ti].name
            ));
        }
    }
    rep
}
