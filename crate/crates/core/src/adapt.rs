//! Per-image unsupervised adaptation from a meta-learned initialization.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::degrade::{pad_to_minimum, PatchSource};
use crate::error::{Error, Result};
use crate::kernelgen::{derive_x4_kernel, discretized_covariance, shift_kernel_to_center, Kernel, Provenance};
use crate::losses::{task_losses, PatchBatch};
use crate::metalearn::MIN_D_PATCH;
use crate::nets::{DiscriminatorParams, GeneratorParams};
use crate::optim::sgd_step;
use crate::rng;
use crate::tensor::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    #[default]
    Off,
    /// Steps 25, 50, 100 and 200 (those within the run).
    Milestones,
    EveryStep,
}

pub const TRACE_MILESTONES: [usize; 4] = [25, 50, 100, 200];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub steps: usize,
    pub alpha_g: f64,
    /// `alpha_g` is divided by `lr_decay_factor` after each of these steps.
    pub lr_decay_after: Vec<usize>,
    pub lr_decay_factor: f64,
    pub alpha_d: f64,
    pub zeta: f64,
    pub d_patch: usize,
    pub patch_batch: usize,
    pub trace: TraceMode,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            alpha_g: 0.01,
            lr_decay_after: vec![50, 200],
            lr_decay_factor: 10.0,
            alpha_d: 0.2,
            zeta: 0.5,
            d_patch: 32,
            patch_batch: 1,
            trace: TraceMode::Off,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr_decay_after.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::Config("lr_decay_after must be sorted".into()));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::Config("lr_decay_factor must be positive".into()));
        }
        if self.patch_batch == 0 || self.d_patch < MIN_D_PATCH {
            return Err(Error::Config(format!("patch_batch must be positive and d_patch >= {MIN_D_PATCH}")));
        }
        for (n, v) in [("alpha_g", self.alpha_g), ("alpha_d", self.alpha_d), ("zeta", self.zeta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{n} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Generator step size used at 1-based step `step`.
    pub fn alpha_g_at(&self, step: usize) -> f64 {
        let decays = self.lr_decay_after.iter().filter(|&&m| step > m).count();
        self.alpha_g / self.lr_decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    /// Post-processed kernel at this step (raw kernel if post-processing failed).
    pub kernel: Vec<f64>,
    pub l_g: f64,
    pub l_d: f64,
    pub sto: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTrace {
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// Post-processed ×2 estimate.
    pub kernel: Kernel,
    /// Raw decoder output the estimate was made from.
    pub raw: Kernel,
    pub trace: AdaptationTrace,
    /// Set when a non-finite loss stopped adaptation early.
    pub degraded: bool,
    pub steps_run: usize,
}

/// Clamps negatives, centers the mass and renormalizes.
pub fn postprocess_kernel(raw: &Kernel) -> Result<Kernel> {
    let clamped: Vec<f64> = raw.values().iter().map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 }).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateKernel);
    }
    let k = Kernel::new(raw.size(), raw.scale(), Provenance::Estimated, clamped)?;
    Ok(shift_kernel_to_center(&k)?.with_provenance(Provenance::Estimated))
}

fn snapshot(step: usize, raw: &Kernel, l_g: f64, l_d: f64) -> TraceEntry {
    let kernel = postprocess_kernel(raw)
        .map(|k| k.into_values())
        .unwrap_or_else(|_| raw.values().to_vec());
    TraceEntry {
        step,
        kernel,
        l_g,
        l_d,
        sto: (1.0 - raw.sum()).abs(),
    }
}

fn wants_trace(mode: TraceMode, step: usize) -> bool {
    match mode {
        TraceMode::Off => false,
        TraceMode::Milestones => TRACE_MILESTONES.contains(&step),
        TraceMode::EveryStep => true,
    }
}

/// Adapts private copies of `(g, d)` to `lr_image` and returns the
/// post-processed ×2 kernel.
pub fn estimate_kernel(
    lr_image: &Image,
    g: &GeneratorParams,
    d: &DiscriminatorParams,
    config: &AdaptConfig,
    rng_seed: u64,
) -> Result<AdaptOutcome> {
    config.validate()?;
    let scale = 2;
    let mut g = g.clone();
    let mut d = d.clone();
    let lr = pad_to_minimum(lr_image, config.d_patch * scale);
    let src = PatchSource::new(&lr, config.d_patch, scale)?;
    let mut rng = rng::seeded(rng_seed);

    let mut trace = AdaptationTrace::default();
    let k0 = g.derive_kernel();
    let mut best = (k0.clone(), (1.0 - k0.sum()).abs());
    let mut degraded = false;
    let mut steps_run = 0;
    if config.trace == TraceMode::EveryStep {
        trace.entries.push(snapshot(0, &k0, f64::NAN, f64::NAN));
    }
    for step in 1..=config.steps {
        d.refresh_spectral();
        let mut batch = PatchBatch {
            g_inputs: Vec::with_capacity(config.patch_batch),
            d_reals: Vec::with_capacity(config.patch_batch),
        };
        for _ in 0..config.patch_batch {
            let p = src.sample(&mut rng);
            batch.g_inputs.push(p.g_input);
            batch.d_reals.push(p.d_real);
        }
        let ev = match task_losses(&g, &d, &batch, config.zeta, true) {
            Ok(ev) if ev.is_finite() => ev,
            Ok(_) | Err(Error::NonFinite(_)) => {
                warn!("non-finite loss at adaptation step {step}; returning best-so-far kernel");
                degraded = true;
                break;
            }
            Err(e) => return Err(e),
        };
        d.commit_running_stats(&ev.real_cache);
        d.commit_running_stats(&ev.fake_cache);
        sgd_step(&mut g.params, ev.grad_g.as_ref().expect("gradients"), config.alpha_g_at(step));
        sgd_step(&mut d.params, ev.grad_d.as_ref().expect("gradients"), config.alpha_d);
        if !g.params.all_finite() || !d.params.all_finite() {
            warn!("parameters diverged at adaptation step {step}; returning best-so-far kernel");
            degraded = true;
            break;
        }
        steps_run = step;
        let k = g.derive_kernel();
        let s = (1.0 - k.sum()).abs();
        if s <= best.1 {
            best = (k.clone(), s);
        }
        if wants_trace(config.trace, step) {
            trace.entries.push(snapshot(step, &k, ev.l_g, ev.l_d));
        }
    }
    // Without divergence the final kernel is the estimate; the lowest-sto
    // snapshot is only used as a fallback.
    let raw = if degraded { best.0 } else { g.derive_kernel() };
    let kernel = postprocess_kernel(&raw)?;
    Ok(AdaptOutcome {
        kernel,
        raw,
        trace,
        degraded,
        steps_run,
    })
}

/// Runs the ×2 adaptation and, for `scale == 4`, derives the ×4 kernel.
pub fn estimate_kernel_at_scale(
    lr_image: &Image,
    g: &GeneratorParams,
    d: &DiscriminatorParams,
    config: &AdaptConfig,
    scale: usize,
    rng_seed: u64,
) -> Result<AdaptOutcome> {
    let mut out = estimate_kernel(lr_image, g, d, config, rng_seed)?;
    match scale {
        2 => Ok(out),
        4 => {
            out.kernel = derive_x4_kernel(&out.kernel)?.with_provenance(Provenance::Estimated);
            Ok(out)
        }
        s => Err(Error::UnsupportedScale(s)),
    }
}

/// `max(L^K-COV(est200, gt) − L^K-COV(est200, est0), 0)`: positive when the
/// adapted kernel stayed closer to its initialization than to the truth.
pub fn fallback_indicator(est200: &Kernel, est0: &Kernel, gt: &Kernel) -> Result<f64> {
    let s200 = discretized_covariance(est200)?;
    let s0 = discretized_covariance(est0)?;
    let sgt = discretized_covariance(gt)?;
    Ok((s200.l1_distance(&sgt) - s200.l1_distance(&s0)).max(0.0))
}
