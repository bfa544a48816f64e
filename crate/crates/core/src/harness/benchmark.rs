//! Benchmark generation: one random kernel per HR image, degraded LR image
//! plus sidecar kernel, and a manifest that lists every written file.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degrade::degrade_image;
use crate::error::{Error, Result};
use crate::io::archive::{save_kernel, write_atomic};
use crate::io::png::{list_images, read_image, write_png};
use crate::kernelgen::{
    derive_x4_kernel, perturb_kernel_multiplicative, sample_gaussian_kernel, shift_kernel_to_center, Kernel,
    KernelDistribution,
};
use crate::rng;
use crate::tensor::Image;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "metakernel-benchmark";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gaussian,
    NonGaussian,
    Noisy,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Gaussian => "gaussian",
            Variant::NonGaussian => "non_gaussian",
            Variant::Noisy => "noisy",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Variant::Gaussian),
            "non_gaussian" | "non-gaussian" => Ok(Variant::NonGaussian),
            "noisy" => Ok(Variant::Noisy),
            _ => Err(Error::Config(format!("unknown variant {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub source: PathBuf,
    pub scale: usize,
    pub variant: Variant,
    /// Kernel perturbation bound as a fraction of the peak (non-Gaussian variant).
    pub kernel_noise: f64,
    /// AWGN standard deviation as a fraction of the pixel range (noisy variant).
    pub image_noise: f64,
    pub seed: u64,
    pub kernel: KernelDistribution,
}

impl BenchmarkSpec {
    pub fn new(source: impl Into<PathBuf>, scale: usize, variant: Variant, seed: u64) -> Self {
        Self {
            source: source.into(),
            scale,
            variant,
            kernel_noise: 0.4,
            image_noise: 10.0 / 255.0,
            seed,
            kernel: KernelDistribution::default(),
        }
    }

    /// SHA-256 over the canonical JSON encoding of the spec.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&json);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::UnsupportedScale(self.scale));
        }
        if !(0.0..=1.0).contains(&self.kernel_noise) || !(0.0..1.0).contains(&self.image_noise) {
            return Err(Error::Config("noise fractions out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub source_file: PathBuf,
    pub status: String,
    pub lr_file: Option<String>,
    pub kernel_file: Option<String>,
    /// HR region used: top-left crop to a multiple of the scale.
    pub hr_height: usize,
    pub hr_width: usize,
    pub kernel_seed: u64,
    pub noise_seed: u64,
    pub theta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl ManifestRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub spec: BenchmarkSpec,
    pub spec_hash: String,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Archive {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Archive {
                path,
                reason: format!("unexpected format {}", m.format),
            });
        }
        Ok(m)
    }

    /// Every file the manifest lists, relative to the benchmark directory.
    pub fn listed_files(&self) -> Vec<String> {
        let mut out = vec![MANIFEST_FILE.to_string()];
        for r in &self.rows {
            out.extend(r.lr_file.iter().cloned());
            out.extend(r.kernel_file.iter().cloned());
        }
        out
    }
}

/// The benchmark ground-truth kernel for one image: sampled ×2 Gaussian,
/// optionally perturbed, centered, and for ×4 derived analytically.
pub fn benchmark_kernel(spec: &BenchmarkSpec, kernel_seed: u64) -> Result<(Kernel, (f64, f64, f64))> {
    let mut r = rng::seeded(kernel_seed);
    let gs = spec.kernel.sample_spec(&mut r);
    let mut k = sample_gaussian_kernel(&gs, spec.kernel.size)?;
    if spec.variant == Variant::NonGaussian {
        k = perturb_kernel_multiplicative(&k, spec.kernel_noise, rng::derive_seed(kernel_seed, "perturb", 0));
    }
    let mut k = shift_kernel_to_center(&k)?;
    if spec.scale == 4 {
        k = shift_kernel_to_center(&derive_x4_kernel(&k)?)?;
    }
    Ok((k, (gs.theta, gs.lambda1, gs.lambda2)))
}

/// Crops to the largest top-left region divisible by `scale`.
pub fn crop_to_scale(img: &Image, scale: usize) -> Result<Image> {
    let h = img.height() / scale * scale;
    let w = img.width() / scale * scale;
    if h == 0 || w == 0 {
        return Err(Error::sizing("image smaller than the scale factor"));
    }
    img.crop(0, 0, h, w)
}

pub fn lr_file_name(stem: &str, scale: usize) -> String {
    format!("{stem}_x{scale}.png")
}

pub fn kernel_file_name(stem: &str, scale: usize) -> String {
    format!("{stem}_x{scale}.kernel")
}

pub fn gen_benchmark(spec: &BenchmarkSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let files = list_images(&spec.source)?;
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(files.len());
    for (i, path) in files.iter().enumerate() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let kernel_seed = rng::derive_seed(spec.seed, "kernel", i as u64);
        let noise_seed = rng::derive_seed(spec.seed, "noise", i as u64);
        let (k, (theta, l1, l2)) = benchmark_kernel(spec, kernel_seed)?;
        let mut row = ManifestRow {
            image_id: stem.clone(),
            source_file: path.clone(),
            status: "ok".into(),
            lr_file: None,
            kernel_file: None,
            hr_height: 0,
            hr_width: 0,
            kernel_seed,
            noise_seed,
            theta,
            lambda1: l1,
            lambda2: l2,
        };
        let hr = match read_image(path).and_then(|img| crop_to_scale(&img, spec.scale)) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                row.status = format!("skipped: {e}");
                rows.push(row);
                continue;
            }
        };
        row.hr_height = hr.height();
        row.hr_width = hr.width();
        let noise = if spec.variant == Variant::Noisy { spec.image_noise } else { 0.0 };
        let lr = degrade_image(&hr, &k, spec.scale, noise, noise_seed)?;
        let lr_name = lr_file_name(&stem, spec.scale);
        let k_name = kernel_file_name(&stem, spec.scale);
        write_png(&out_dir.join(&lr_name), &lr)?;
        save_kernel(&out_dir.join(&k_name), &k)?;
        row.lr_file = Some(lr_name);
        row.kernel_file = Some(k_name);
        rows.push(row);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        spec_hash: spec.hash()?,
        rows,
    };
    write_atomic(&out_dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
