//! Synthetic degradation `(hr ⊛ k)↓s + n`, task sampling, padding and the
//! gradient-weighted patch sampler that feeds the GAN.

use log::warn;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernelgen::{shift_kernel_to_center, GaussianSpec, Kernel, KernelDistribution};
use crate::parallel;
use crate::rng;
use crate::tensor::{reflect_index, Image, Tensor};

/// Convolves every channel with `k` (true convolution, reflective boundary) and
/// keeps every `scale`-th sample starting at index 0. No noise, no clipping.
pub fn blur_subsample(hr: &Image, k: &Kernel, scale: usize) -> Result<Image> {
    if scale == 0 {
        return Err(Error::sizing("scale must be positive"));
    }
    let (c, h, w) = hr.tensor().shape();
    if h % scale != 0 || w % scale != 0 {
        return Err(Error::sizing(format!(
            "image {h}x{w} is not divisible by scale {scale}; crop first"
        )));
    }
    let (oh, ow) = (h / scale, w / scale);
    let m = k.size();
    let r = (m / 2) as isize;
    let kv = k.values();
    let mut out = Tensor::zeros(c, oh, ow);
    let src = &hr.tensor().data;
    // One chunk per output row; rows are independent.
    parallel::for_each_chunk_mut(&mut out.data, ow, c * oh * ow * m * m, |row_idx, dst| {
        let (ch, oy) = (row_idx / oh, row_idx % oh);
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let cy = (oy * scale) as isize;
        for (ox, d) in dst.iter_mut().enumerate() {
            let cx = (ox * scale) as isize;
            let mut acc = 0.0;
            for i in 0..m {
                let sy = reflect_index(cy + r - i as isize, h);
                let row = &plane[sy * w..(sy + 1) * w];
                let krow = &kv[i * m..(i + 1) * m];
                for (j, &kval) in krow.iter().enumerate() {
                    let sx = reflect_index(cx + r - j as isize, w);
                    acc += kval * row[sx];
                }
            }
            *d = acc;
        }
    });
    Ok(Image(out))
}

/// Full degradation: blur, subsample, add white Gaussian noise with standard
/// deviation `noise_level` (as a fraction of the unit pixel range), clip to `[0, 1]`.
pub fn degrade_image(
    hr: &Image,
    k: &Kernel,
    scale: usize,
    noise_level: f64,
    rng_seed: u64,
) -> Result<Image> {
    if !(0.0..1.0).contains(&noise_level) {
        return Err(Error::Config(format!("noise level {noise_level} outside [0, 1)")));
    }
    let mut lr = blur_subsample(hr, k, scale)?;
    if noise_level > 0.0 {
        let mut rng = rng::seeded(rng_seed);
        let normal = Normal::new(0.0, noise_level).expect("positive sigma");
        for v in lr.0.data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    for v in lr.0.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(lr)
}

/// Reflection-pads symmetrically until both sides reach `min_size`.
pub fn pad_to_minimum(image: &Image, min_size: usize) -> Image {
    let (c, h, w) = image.tensor().shape();
    if h >= min_size && w >= min_size {
        return image.clone();
    }
    let nh = h.max(min_size);
    let nw = w.max(min_size);
    let top = (nh - h) / 2;
    let left = (nw - w) / 2;
    let mut out = Tensor::zeros(c, nh, nw);
    for ch in 0..c {
        let src = image.tensor().plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..nh {
            let sy = reflect_index(y as isize - top as isize, h);
            for x in 0..nw {
                let sx = reflect_index(x as isize - left as isize, w);
                dst[y * nw + x] = src[sy * w + sx];
            }
        }
    }
    Image(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Augmentation {
    /// Number of 90° counter-clockwise rotations (0–3).
    pub rot90: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl Augmentation {
    pub fn random(rng: &mut rng::Rng) -> Self {
        Self {
            rot90: if rng.random_bool(0.5) { 1 } else { 0 },
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
        }
    }

    pub fn apply(&self, img: &Image) -> Image {
        let mut out = img.rot90(self.rot90);
        if self.vflip {
            out = out.flip_vertical();
        }
        if self.hflip {
            out = out.flip_horizontal();
        }
        out
    }
}

/// One meta-learning episode.
#[derive(Debug, Clone)]
pub struct Task {
    pub lr_image: Image,
    pub gt_kernel: Kernel,
    pub gt_spec: Option<GaussianSpec>,
    pub scale: usize,
    pub hr_source_id: String,
    pub augmentation: Augmentation,
    pub noise_level: f64,
}

/// A named collection of HR images.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<(String, Image)>,
}

impl Dataset {
    pub fn new(images: Vec<(String, Image)>) -> Self {
        Self { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Samples a clean training task: uniform image, uniform crop, random
/// rotation/flips, fresh kernel, noiseless degradation.
pub fn sample_task(
    dataset: &Dataset,
    kernel_dist: &KernelDistribution,
    scale: usize,
    crop: usize,
    rng_seed: u64,
) -> Result<Task> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset has no images".into()));
    }
    if !crop.is_multiple_of(scale) {
        return Err(Error::sizing(format!("crop {crop} not divisible by scale {scale}")));
    }
    let mut rng = rng::seeded(rng_seed);
    let idx = rng.random_range(0..dataset.len());
    let (id, hr) = &dataset.images[idx];
    let hr = if hr.height() < crop || hr.width() < crop {
        warn!(
            "image {id} ({}x{}) is smaller than the {crop} crop; reflection-padding",
            hr.height(),
            hr.width()
        );
        pad_to_minimum(hr, crop)
    } else {
        hr.clone()
    };
    let y0 = rng.random_range(0..=hr.height() - crop);
    let x0 = rng.random_range(0..=hr.width() - crop);
    let patch = hr.crop(y0, x0, crop, crop)?;
    let augmentation = Augmentation::random(&mut rng);
    let patch = augmentation.apply(&patch);
    let (spec, k) = kernel_dist.sample(&mut rng);
    let k = shift_kernel_to_center(&k)?;
    let lr_image = degrade_image(&patch, &k, scale, 0.0, 0)?;
    Ok(Task {
        lr_image,
        gt_kernel: k,
        gt_spec: Some(spec),
        scale,
        hr_source_id: id.clone(),
        augmentation,
        noise_level: 0.0,
    })
}

/// Per-pixel gradient magnitude from central differences (edge samples
/// replicated), averaged over channels.
pub fn gradient_magnitude(image: &Tensor) -> Tensor {
    let (c, h, w) = image.shape();
    let mut out = Tensor::zeros(1, h, w);
    for ch in 0..c {
        let p = image.plane(ch);
        for y in 0..h {
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let gx = 0.5 * (p[y * w + xr] - p[y * w + xl]);
                let gy = 0.5 * (p[yd * w + x] - p[yu * w + x]);
                out.data[y * w + x] += (gx * gx + gy * gy).sqrt() / c as f64;
            }
        }
    }
    out
}

/// Selection probabilities for every top-left anchor of a square patch.
#[derive(Debug, Clone)]
pub struct PatchProbabilityMap {
    pub patch_size: usize,
    pub anchors_h: usize,
    pub anchors_w: usize,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PatchProbabilityMap {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, y: usize, x: usize) -> f64 {
        self.probs[y * self.anchors_w + x]
    }

    /// Draws an anchor `(y, x)`.
    pub fn sample_anchor(&self, rng: &mut rng::Rng) -> (usize, usize) {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.probs.len() - 1);
        (i / self.anchors_w, i % self.anchors_w)
    }
}

/// Weights each anchor by the summed gradient magnitude inside its patch.
/// A flat image yields the uniform distribution.
pub fn patch_selection_probabilities(image: &Tensor, patch_size: usize) -> Result<PatchProbabilityMap> {
    let (_, h, w) = image.shape();
    if patch_size == 0 || h < patch_size || w < patch_size {
        return Err(Error::sizing(format!(
            "image {h}x{w} is smaller than patch {patch_size}"
        )));
    }
    let grad = gradient_magnitude(image);
    // Summed-area table with a zero border row/column.
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += grad.data[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let (ah, aw) = (h - patch_size + 1, w - patch_size + 1);
    let mut probs = Vec::with_capacity(ah * aw);
    for y in 0..ah {
        for x in 0..aw {
            let (y1, x1) = (y + patch_size, x + patch_size);
            let s = sat[y1 * (w + 1) + x1] - sat[y * (w + 1) + x1] - sat[y1 * (w + 1) + x]
                + sat[y * (w + 1) + x];
            probs.push(s.max(0.0));
        }
    }
    let total: f64 = probs.iter().sum();
    if total > 1e-12 * (ah * aw) as f64 {
        probs.iter_mut().for_each(|p| *p /= total);
    } else {
        let u = 1.0 / (ah * aw) as f64;
        probs.iter_mut().for_each(|p| *p = u);
    }
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    Ok(PatchProbabilityMap {
        patch_size,
        anchors_h: ah,
        anchors_w: aw,
        probs,
        cumulative,
    })
}

/// A generator input patch and the matching real patch for the discriminator.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub g_input: Tensor,
    pub d_real: Tensor,
    pub anchor: (usize, usize),
}

/// Luminance of an LR image plus its patch sampler, built once per task.
#[derive(Debug, Clone)]
pub struct PatchSource {
    pub luma: Tensor,
    pub probs: PatchProbabilityMap,
    pub d_patch: usize,
    pub scale: usize,
}

impl PatchSource {
    pub fn new(lr_image: &Image, d_patch: usize, scale: usize) -> Result<Self> {
        let luma = lr_image.luminance();
        let probs = patch_selection_probabilities(&luma, d_patch * scale)?;
        Ok(Self {
            luma,
            probs,
            d_patch,
            scale,
        })
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> PatchPair {
        let (y, x) = self.probs.sample_anchor(rng);
        let g = self.d_patch * self.scale;
        let g_input = self.luma.crop(y, x, g, g).expect("anchor within bounds");
        let d_real = g_input
            .crop(0, 0, self.d_patch, self.d_patch)
            .expect("sub-patch within bounds");
        PatchPair {
            g_input,
            d_real,
            anchor: (y, x),
        }
    }
}

/// Draws a generator/discriminator patch pair from a task's LR image.
pub fn sample_patch_pair(
    task: &Task,
    probs: &PatchProbabilityMap,
    d_patch: usize,
    rng_seed: u64,
) -> Result<PatchPair> {
    let g = d_patch * task.scale;
    if probs.patch_size != g {
        return Err(Error::sizing(format!(
            "probability map built for patch {} but generator patch is {g}",
            probs.patch_size
        )));
    }
    let luma = task.lr_image.luminance();
    if luma.height < g || luma.width < g {
        return Err(Error::sizing("LR image smaller than generator patch; pad first"));
    }
    let mut rng = rng::seeded(rng_seed);
    let (y, x) = probs.sample_anchor(&mut rng);
    let g_input = luma.crop(y, x, g, g)?;
    let d_real = g_input.crop(0, 0, d_patch, d_patch)?;
    Ok(PatchPair {
        g_input,
        d_real,
        anchor: (y, x),
    })
}
