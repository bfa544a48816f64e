//! First-order meta-training of the generator and discriminator initializations.
//!
//! Each outer step samples a task, adapts clones of both networks with
//! simultaneous SGD updates, records the meta-objectives every `n_val` inner
//! steps (value and gradient with respect to the parameters at that point),
//! and applies the interval-weighted sum of those gradients to the base
//! parameters with Adam.

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::degrade::{pad_to_minimum, sample_task, Dataset, PatchSource, Task};
use crate::error::{Error, Result};
use crate::io::archive::{save_checkpoint, Checkpoint};
use crate::kernelgen::KernelDistribution;
use crate::losses::{meta_losses, task_losses, LossWeights, PatchBatch};
use crate::nets::{
    init_discriminator, init_generator, DiscriminatorConfig, DiscriminatorParams, GeneratorConfig, GeneratorParams,
    ParamSet,
};
use crate::optim::{sgd_step, Adam, AdamConfig};
use crate::rng;

/// Smallest discriminator patch for which generated patches still give a
/// discriminator map wider than one pixel (`d_patch - 11`). At one pixel,
/// batch norm maps every input to the same output and the generator gets
/// no adversarial gradient.
pub const MIN_D_PATCH: usize = 13;

/// How the early interval weights are bounded as they decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleClamp {
    /// Floor at `0.03/count`: weights start equal and decay to the floor.
    #[default]
    Max,
    /// The formula read literally with `min`.
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub n_steps: usize,
    pub n_adapt: usize,
    pub n_val: usize,
    pub alpha_g: f64,
    pub alpha_d: f64,
    pub beta_g: f64,
    pub beta_d: f64,
    pub task_batch: usize,
    pub patch_batch: usize,
    pub d_patch: usize,
    pub crop: usize,
    pub scale: usize,
    pub weights: LossWeights,
    pub schedule_clamp: ScheduleClamp,
    pub kernel: KernelDistribution,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Write a checkpoint every this many outer steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Task resampling attempts after a non-finite loss before giving up.
    pub max_resample: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            n_steps: 100_000,
            n_adapt: 25,
            n_val: 5,
            alpha_g: 0.01,
            alpha_d: 0.2,
            beta_g: 1e-4,
            beta_d: 1e-4,
            task_batch: 1,
            patch_batch: 1,
            d_patch: 32,
            crop: 192,
            scale: 2,
            weights: LossWeights::default(),
            schedule_clamp: ScheduleClamp::Max,
            kernel: KernelDistribution::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            checkpoint_every: 1000,
            max_resample: 10,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_val == 0 || self.n_adapt == 0 || !self.n_adapt.is_multiple_of(self.n_val) {
            return bad(format!(
                "n_adapt ({}) must be a positive multiple of n_val ({})",
                self.n_adapt, self.n_val
            ));
        }
        for (name, v) in [
            ("alpha_g", self.alpha_g),
            ("alpha_d", self.alpha_d),
            ("beta_g", self.beta_g),
            ("beta_d", self.beta_d),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.task_batch == 0 || self.patch_batch == 0 {
            return bad("task_batch and patch_batch must be positive".into());
        }
        if self.scale != 2 {
            return Err(Error::UnsupportedScale(self.scale));
        }
        if self.d_patch < MIN_D_PATCH {
            return bad(format!("d_patch {} is below the minimum of {MIN_D_PATCH}", self.d_patch));
        }
        if !self.crop.is_multiple_of(self.scale) || self.crop / self.scale < self.d_patch * self.scale {
            return bad(format!(
                "crop {} too small for generator patches of {}",
                self.crop,
                self.d_patch * self.scale
            ));
        }
        self.weights.validate()?;
        KernelDistribution::new(self.kernel.lambda_min, self.kernel.lambda_max, self.kernel.size)?;
        Ok(())
    }

    pub fn interval_count(&self) -> usize {
        self.n_adapt / self.n_val
    }
}

/// Interval-loss weights for outer step `j` (0-based).
///
/// The first `count − 1` weights start at `1/count` and decay linearly by
/// `3/(count·10⁴)` per step, bounded by `0.03/count`; the last weight takes
/// the remainder so the vector sums to one.
pub fn get_interval_loss_weights(j: usize, count: usize, clamp: ScheduleClamp) -> Vec<f64> {
    assert!(count > 0, "at least one interval");
    let c = count as f64;
    let decayed = 1.0 / c - j as f64 * 3.0 / (c * 10_000.0);
    let floor = 0.03 / c;
    let early = match clamp {
        ScheduleClamp::Max => decayed.max(floor),
        ScheduleClamp::Min => decayed.min(floor),
    };
    let mut w = vec![early; count - 1];
    if early == 1.0 / c {
        // Undecayed: all weights equal (1 − Σ would be off by an ulp).
        w.push(early);
    } else {
        let s: f64 = w.iter().sum();
        w.push(1.0 - s);
    }
    w
}

/// Meta-objective values and gradients recorded at each interval checkpoint.
#[derive(Debug, Clone, Default)]
pub struct LossBook {
    pub g: Vec<f64>,
    pub d: Vec<f64>,
    pub kpix: Vec<f64>,
    pub grad_g: Vec<ParamSet>,
    pub grad_d: Vec<ParamSet>,
}

impl LossBook {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub g: GeneratorParams,
    pub d: DiscriminatorParams,
    pub book: LossBook,
}

fn sample_batch(src: &PatchSource, n: usize, rng: &mut rng::Rng) -> PatchBatch {
    let mut g_inputs = Vec::with_capacity(n);
    let mut d_reals = Vec::with_capacity(n);
    for _ in 0..n {
        let p = src.sample(rng);
        g_inputs.push(p.g_input);
        d_reals.push(p.d_real);
    }
    PatchBatch { g_inputs, d_reals }
}

/// Adapts clones of `(g, d)` to one task for `n_adapt` simultaneous SGD steps.
///
/// The meta-objectives are evaluated on one query batch drawn at the start
/// and reused at every interval, so checkpoints differ only through the
/// parameters.
pub fn inner_adapt(
    g: &GeneratorParams,
    d: &DiscriminatorParams,
    task: &Task,
    config: &MetaConfig,
    rng_seed: u64,
) -> Result<InnerResult> {
    let mut g = g.clone();
    let mut d = d.clone();
    let lr = pad_to_minimum(&task.lr_image, config.d_patch * task.scale);
    let src = PatchSource::new(&lr, config.d_patch, task.scale)?;
    let mut rng = rng::seeded(rng_seed);
    let query = sample_batch(&src, config.patch_batch, &mut rng);
    let mut book = LossBook::default();
    for step in 1..=config.n_adapt {
        d.refresh_spectral();
        let batch = sample_batch(&src, config.patch_batch, &mut rng);
        let ev = task_losses(&g, &d, &batch, config.weights.zeta, true)?;
        if !ev.is_finite() {
            return Err(Error::NonFinite(format!("task loss at inner step {step}")));
        }
        d.commit_running_stats(&ev.real_cache);
        d.commit_running_stats(&ev.fake_cache);
        sgd_step(&mut g.params, ev.grad_g.as_ref().expect("gradients requested"), config.alpha_g);
        sgd_step(&mut d.params, ev.grad_d.as_ref().expect("gradients requested"), config.alpha_d);
        if step % config.n_val == 0 {
            let mev = meta_losses(&g, &d, &query, &task.gt_kernel, &config.weights, true)?;
            if !mev.is_finite() {
                return Err(Error::NonFinite(format!("meta loss at inner step {step}")));
            }
            book.g.push(mev.l_g);
            book.d.push(mev.l_d);
            book.kpix.push(mev.kpix.unwrap_or(f64::NAN));
            book.grad_g.push(mev.grad_g.expect("gradients requested"));
            book.grad_d.push(mev.grad_d.expect("gradients requested"));
        }
    }
    Ok(InnerResult { g, d, book })
}

/// Base parameters plus outer-optimizer state between outer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub g: GeneratorParams,
    pub d: DiscriminatorParams,
    pub adam_g: Adam,
    pub adam_d: Adam,
    /// Completed outer steps.
    pub step: usize,
    pub seed: u64,
}

impl MetaState {
    pub fn init(config: &MetaConfig, seed: u64) -> Result<Self> {
        let g = init_generator(config.scale, &config.generator, rng::derive_seed(seed, "init-generator", 0))?;
        let d = init_discriminator(&config.discriminator, rng::derive_seed(seed, "init-discriminator", 0))?;
        Ok(Self {
            adam_g: Adam::new(&g.params, AdamConfig::with_lr(config.beta_g)),
            adam_d: Adam::new(&d.params, AdamConfig::with_lr(config.beta_d)),
            g,
            d,
            step: 0,
            seed,
        })
    }

    pub fn to_checkpoint(&self, config: &MetaConfig) -> Checkpoint {
        Checkpoint {
            generator: self.g.clone(),
            discriminator: self.d.clone(),
            step: self.step,
            seed: self.seed,
            adam: Some((self.adam_g.clone(), self.adam_d.clone())),
            config: serde_json::to_string(config).ok(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint, config: &MetaConfig) -> Result<Self> {
        let (adam_g, adam_d) = match ck.adam {
            Some(a) => a,
            None => (
                Adam::new(&ck.generator.params, AdamConfig::with_lr(config.beta_g)),
                Adam::new(&ck.discriminator.params, AdamConfig::with_lr(config.beta_d)),
            ),
        };
        Ok(Self {
            g: ck.generator,
            d: ck.discriminator,
            adam_g,
            adam_d,
            step: ck.step,
            seed: ck.seed,
        })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterRecord {
    pub step: usize,
    pub meta_g: f64,
    pub meta_d: f64,
    pub kpix: f64,
    pub resampled: usize,
}

/// Runs one outer step on `state`.
pub fn outer_step(state: &mut MetaState, dataset: &Dataset, config: &MetaConfig) -> Result<OuterRecord> {
    let j = state.step;
    let weights = get_interval_loss_weights(j, config.interval_count(), config.schedule_clamp);
    let step_seed = rng::derive_seed(state.seed, "outer", j as u64);
    let mut grad_g = state.g.params.zeros_like();
    let mut grad_d = state.d.params.zeros_like();
    let mut buffers = None;
    let (mut meta_g, mut meta_d, mut kpix) = (0.0, 0.0, 0.0);
    let mut resampled = 0;
    for t in 0..config.task_batch {
        let mut attempt = 0;
        let result = loop {
            let seed = rng::derive_seed(step_seed, "task", (t * (config.max_resample + 1) + attempt) as u64);
            let task = sample_task(dataset, &config.kernel, config.scale, config.crop, seed)?;
            match inner_adapt(&state.g, &state.d, &task, config, rng::derive_seed(seed, "inner", 0)) {
                Ok(r) => break r,
                Err(Error::NonFinite(what)) if attempt < config.max_resample => {
                    warn!("outer step {j}: {what} on task from {}; resampling", task.hr_source_id);
                    attempt += 1;
                    resampled += 1;
                }
                Err(e) => return Err(e),
            }
        };
        let inv = 1.0 / config.task_batch as f64;
        for (i, w) in weights.iter().enumerate() {
            grad_g.axpy(w * inv, &result.book.grad_g[i]);
            grad_d.axpy(w * inv, &result.book.grad_d[i]);
            meta_g += w * inv * result.book.g[i];
            meta_d += w * inv * result.book.d[i];
            kpix += w * inv * result.book.kpix[i];
        }
        buffers = Some(result.d.buffers);
    }
    state.adam_g.step(&mut state.g.params, &grad_g);
    state.adam_d.step(&mut state.d.params, &grad_d);
    if let Some(b) = buffers {
        state.d.buffers = b;
    }
    state.step += 1;
    Ok(OuterRecord {
        step: state.step,
        meta_g,
        meta_d,
        kpix,
        resampled,
    })
}

pub const FINAL_CHECKPOINT: &str = "final.safetensors";

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step-{step:07}.safetensors"))
}

/// Runs outer steps until `config.n_steps` have completed, starting from
/// `state` (fresh or resumed). Checkpoints go to `checkpoint_dir` when given;
/// on failure a partial-state checkpoint is written before the error is
/// returned.
pub fn meta_train_from(
    mut state: MetaState,
    dataset: &Dataset,
    config: &MetaConfig,
    checkpoint_dir: Option<&Path>,
    mut on_step: impl FnMut(&OuterRecord),
) -> Result<MetaState> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset has no images".into()));
    }
    while state.step < config.n_steps {
        let rec = match outer_step(&mut state, dataset, config) {
            Ok(r) => r,
            Err(e) => {
                if let Some(dir) = checkpoint_dir {
                    let path = dir.join(format!("partial-step-{:07}.safetensors", state.step));
                    match save_checkpoint(&path, &state.to_checkpoint(config)) {
                        Ok(()) => warn!("wrote partial checkpoint {}", path.display()),
                        Err(e2) => warn!("could not write partial checkpoint: {e2}"),
                    }
                }
                return Err(e);
            }
        };
        on_step(&rec);
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && state.step.is_multiple_of(config.checkpoint_every) {
                save_checkpoint(&checkpoint_path(dir, state.step), &state.to_checkpoint(config))?;
            }
        }
        if state.step.is_multiple_of(100) {
            info!("outer step {}: meta_g {:.5} meta_d {:.5} kpix {:.5}", rec.step, rec.meta_g, rec.meta_d, rec.kpix);
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&dir.join(FINAL_CHECKPOINT), &state.to_checkpoint(config))?;
    }
    Ok(state)
}

/// Fresh meta-training run.
pub fn meta_train(
    dataset: &Dataset,
    config: &MetaConfig,
    rng_seed: u64,
    checkpoint_dir: Option<&Path>,
    on_step: impl FnMut(&OuterRecord),
) -> Result<MetaState> {
    config.validate()?;
    let state = MetaState::init(config, rng_seed)?;
    meta_train_from(state, dataset, config, checkpoint_dir, on_step)
}
