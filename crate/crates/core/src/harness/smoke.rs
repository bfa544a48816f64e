//! Scaled-down meta-training experiment on synthetic images: meta-train,
//! then compare three kernel estimates on held-out tasks (adapted from the
//! meta-learned init, the meta-learned prior kernel without adaptation, and
//! adapted from a random init).

use serde::{Deserialize, Serialize};

use crate::adapt::{estimate_kernel, AdaptConfig};
use crate::degrade::{sample_task, Dataset, Task};
use crate::error::Result;
use crate::harness::synth::textured_image;
use crate::kernelgen::KernelDistribution;
use crate::losses::kpix;
use crate::metalearn::{meta_train, MetaConfig, MetaState};
use crate::metrics::l_kcov;
use crate::nets::{DiscriminatorParams, GeneratorParams};
use crate::parallel;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmokeConfig {
    pub train_images: usize,
    pub heldout_tasks: usize,
    pub image_size: usize,
    pub meta: MetaConfig,
    pub adapt: AdaptConfig,
}

impl Default for SmokeConfig {
    fn default() -> Self {
        let mut meta = MetaConfig {
            n_steps: 2000,
            checkpoint_every: 0,
            ..MetaConfig::default()
        };
        meta.kernel = KernelDistribution::new(0.8, 2.0, 11).expect("valid range");
        meta.generator.width = 8;
        meta.discriminator.width = 16;
        Self {
            train_images: 20,
            heldout_tasks: 10,
            image_size: 256,
            meta,
            adapt: AdaptConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub kpix: Vec<f64>,
    pub l_kcov: Vec<f64>,
}

impl ArmResult {
    pub fn mean_kpix(&self) -> f64 {
        self.kpix.iter().sum::<f64>() / self.kpix.len() as f64
    }

    pub fn mean_l_kcov(&self) -> f64 {
        self.l_kcov.iter().sum::<f64>() / self.l_kcov.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeResult {
    pub seed: u64,
    pub meta_adapted: ArmResult,
    pub meta_step0: ArmResult,
    pub random_adapted: ArmResult,
}

impl SmokeResult {
    /// Meta-init adaptation strictly beats both baselines on both means.
    pub fn directional_pass(&self) -> bool {
        let m = &self.meta_adapted;
        [&self.meta_step0, &self.random_adapted]
            .iter()
            .all(|b| m.mean_kpix() < b.mean_kpix() && m.mean_l_kcov() < b.mean_l_kcov())
    }
}

pub fn synthetic_dataset(n: usize, size: usize, seed: u64) -> Dataset {
    let images = parallel::map_range(n, |i| {
        (
            format!("synth-{i:03}"),
            textured_image(size, size, rng::derive_seed(seed, "image", i as u64)),
        )
    });
    Dataset::new(images)
}

pub fn heldout_tasks(config: &SmokeConfig, seed: u64) -> Result<Vec<Task>> {
    let data = synthetic_dataset(config.heldout_tasks, config.image_size, rng::derive_seed(seed, "heldout-images", 0));
    (0..config.heldout_tasks)
        .map(|i| {
            let mut ds = Dataset::new(vec![data.images[i].clone()]);
            let task = sample_task(
                &ds,
                &config.meta.kernel,
                config.meta.scale,
                config.meta.crop,
                rng::derive_seed(seed, "heldout-task", i as u64),
            );
            ds.images.clear();
            task
        })
        .collect()
}

/// Scores one initialization on the held-out tasks after `adapt.steps` steps.
pub fn evaluate_arm(
    g: &GeneratorParams,
    d: &DiscriminatorParams,
    tasks: &[Task],
    adapt: &AdaptConfig,
    seed: u64,
) -> Result<ArmResult> {
    let rows = parallel::map_range(tasks.len(), |i| -> Result<(f64, f64)> {
        let t = &tasks[i];
        let out = estimate_kernel(&t.lr_image, g, d, adapt, rng::derive_seed(seed, "adapt", i as u64))?;
        Ok((kpix(&t.gt_kernel, &out.kernel)?, l_kcov(&t.gt_kernel, &out.kernel)?))
    });
    let mut arm = ArmResult::default();
    for r in rows {
        let (k, c) = r?;
        arm.kpix.push(k);
        arm.l_kcov.push(c);
    }
    Ok(arm)
}

pub fn run_smoke(config: &SmokeConfig, seed: u64, on_step: impl FnMut(&crate::metalearn::OuterRecord)) -> Result<SmokeResult> {
    let train = synthetic_dataset(config.train_images, config.image_size, rng::derive_seed(seed, "train-images", 0));
    let tasks = heldout_tasks(config, seed)?;
    let trained = meta_train(&train, &config.meta, seed, None, on_step)?;
    let random = MetaState::init(&config.meta, rng::derive_seed(seed, "random-init", 0))?;
    let eval_seed = rng::derive_seed(seed, "eval", 0);
    let step0 = AdaptConfig {
        steps: 0,
        ..config.adapt.clone()
    };
    Ok(SmokeResult {
        seed,
        meta_adapted: evaluate_arm(&trained.g, &trained.d, &tasks, &config.adapt, eval_seed)?,
        meta_step0: evaluate_arm(&trained.g, &trained.d, &tasks, &step0, eval_seed)?,
        random_adapted: evaluate_arm(&random.g, &random.d, &tasks, &config.adapt, eval_seed)?,
    })
}
