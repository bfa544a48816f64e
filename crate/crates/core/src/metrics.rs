//! Evaluation numbers: kernel PSNR, covariance distance, Y-channel image
//! PSNR/SSIM with border shaving, and gain correlations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernelgen::{discretized_covariance, shift_kernel_to_center, Kernel};
use crate::tensor::{Image, Tensor, BT601_LUMA};

/// Reported in place of +∞ dB on an exact match.
pub const PSNR_CAP: f64 = 99.0;

fn capped_psnr(peak_sq: f64, mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (peak_sq / mse).log10()).min(PSNR_CAP)
    }
}

/// `10·log10(1/MSE)` between two kernels of the same size. With `align`,
/// both are centered on their center of mass first.
pub fn kernel_psnr(gt: &Kernel, est: &Kernel, align: bool) -> Result<f64> {
    if gt.size() != est.size() {
        return Err(Error::sizing(format!("kernel sizes differ: {} vs {}", gt.size(), est.size())));
    }
    let (a, b) = if align {
        (shift_kernel_to_center(gt)?, shift_kernel_to_center(est)?)
    } else {
        (gt.clone(), est.clone())
    };
    let mse = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.values().len() as f64;
    Ok(capped_psnr(1.0, mse))
}

/// Entrywise L1 distance between discretized covariance matrices.
pub fn l_kcov(gt: &Kernel, est: &Kernel) -> Result<f64> {
    Ok(discretized_covariance(gt)?.l1_distance(&discretized_covariance(est)?))
}

/// Luminance on the [0, 255] scale (BT.601 weights, full range).
pub fn luma_255(img: &Image) -> Result<Tensor> {
    match img.channels() {
        1 => Ok(img.tensor().map(|v| 255.0 * v)),
        3 => {
            let t = img.tensor();
            let plane = t.plane_len();
            let mut out = Tensor::zeros(1, t.height, t.width);
            for i in 0..plane {
                out.data[i] = 255.0
                    * (BT601_LUMA[0] * t.data[i] + BT601_LUMA[1] * t.data[plane + i] + BT601_LUMA[2] * t.data[2 * plane + i]);
            }
            Ok(out)
        }
        c => Err(Error::sizing(format!("unsupported channel count {c}"))),
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut w = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 - c, x as f64 - c);
            w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Mean SSIM over all fully contained 11×11 Gaussian windows, for data on
/// the [0, 255] scale.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() || a.channels != 1 {
        return Err(Error::sizing("ssim needs two single-channel images of equal size"));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::sizing(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (h, w) = (a.height, a.width);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                let row = (y + ky) * w + x;
                for kx in 0..SSIM_WINDOW {
                    let g = win[ky * SSIM_WINDOW + kx];
                    let (va, vb) = (a.data[row + kx], b.data[row + kx]);
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// PSNR (peak 255) and SSIM on luminance after removing `shave` pixels from
/// every border.
pub fn image_psnr_ssim_y(sr: &Image, hr: &Image, shave: usize) -> Result<(f64, f64)> {
    if (sr.channels(), sr.height(), sr.width()) != (hr.channels(), hr.height(), hr.width()) {
        return Err(Error::sizing(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            sr.channels(),
            sr.height(),
            sr.width(),
            hr.channels(),
            hr.height(),
            hr.width()
        )));
    }
    if sr.height() <= 2 * shave || sr.width() <= 2 * shave {
        return Err(Error::sizing("image smaller than the shaved border"));
    }
    let (h, w) = (sr.height() - 2 * shave, sr.width() - 2 * shave);
    let ya = luma_255(sr)?.crop(shave, shave, h, w)?;
    let yb = luma_255(hr)?.crop(shave, shave, h, w)?;
    let mse = ya.data.iter().zip(&yb.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / ya.len() as f64;
    let psnr = capped_psnr(255.0 * 255.0, mse);
    let s = if ya == yb { 1.0 } else { ssim(&ya, &yb)? };
    Ok((psnr, s))
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub scale: usize,
    pub variant: String,
    pub run: usize,
    pub kernel_psnr: Option<f64>,
    pub l_kcov: Option<f64>,
    pub image_psnr: Option<f64>,
    pub image_ssim: Option<f64>,
    pub l_t: Option<f64>,
    pub steps: usize,
    pub wall_time_s: f64,
    pub degraded: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMetric {
    KernelPsnr,
    LKcov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageMetric {
    Psnr,
    Ssim,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::sizing("paired series differ in length"));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Config("correlation undefined for a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::sizing("paired series differ in length"));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

fn kernel_value(r: &EvalRecord, m: KernelMetric) -> Option<f64> {
    match m {
        KernelMetric::KernelPsnr => r.kernel_psnr,
        KernelMetric::LKcov => r.l_kcov,
    }
}

fn image_value(r: &EvalRecord, m: ImageMetric) -> Option<f64> {
    match m {
        ImageMetric::Psnr => r.image_psnr,
        ImageMetric::Ssim => r.image_ssim,
    }
}

/// Pairs records of two methods by `(image, scale, variant, run)` and
/// correlates the per-image gains (A − B) in the kernel and image metrics.
/// Returns `(pearson_r, spearman_rho)`.
pub fn correlate_gains(
    records_a: &[EvalRecord],
    records_b: &[EvalRecord],
    kernel_metric: KernelMetric,
    image_metric: ImageMetric,
) -> Result<(f64, f64)> {
    let key = |r: &EvalRecord| (r.image_id.clone(), r.scale, r.variant.clone(), r.run);
    let b: HashMap<_, _> = records_b.iter().map(|r| (key(r), r)).collect();
    let mut kx = Vec::new();
    let mut iy = Vec::new();
    for ra in records_a {
        let Some(rb) = b.get(&key(ra)) else { continue };
        if let (Some(ka), Some(kb), Some(ia), Some(ib)) = (
            kernel_value(ra, kernel_metric),
            kernel_value(rb, kernel_metric),
            image_value(ra, image_metric),
            image_value(rb, image_metric),
        ) {
            kx.push(ka - kb);
            iy.push(ia - ib);
        }
    }
    if kx.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: kx.len() });
    }
    Ok((pearson(&kx, &iy)?, spearman(&kx, &iy)?))
}
