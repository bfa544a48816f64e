//! Benchmark evaluation: kernel estimation per manifest row, kernel and
//! image metrics, CSV output and the per-(scale, variant) summary.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use crate::adapt::{estimate_kernel_at_scale, fallback_indicator, postprocess_kernel, AdaptConfig};
use crate::error::{Error, Result};
use crate::harness::benchmark::{Manifest, ManifestRow};
use crate::harness::sr::{run_sr, SrAdapterSpec};
use crate::io::archive::{load_kernel, write_atomic};
use crate::io::png::read_image;
use crate::kernelgen::{derive_x4_kernel, Kernel};
use crate::metrics::{image_psnr_ssim_y, kernel_psnr, l_kcov, EvalRecord};
use crate::nets::{DiscriminatorParams, GeneratorParams};
use crate::parallel;
use crate::rng;

/// CSV column order. Optional metrics are written as empty cells.
pub const CSV_COLUMNS: [&str; 13] = [
    "image_id",
    "scale",
    "variant",
    "run",
    "kernel_psnr",
    "l_kcov",
    "image_psnr",
    "image_ssim",
    "l_t",
    "steps",
    "wall_time_s",
    "degraded",
    "error",
];

#[derive(Debug, Clone)]
pub enum KernelSource {
    /// Adapt from a (meta-)trained initialization.
    Model { g: GeneratorParams, d: DiscriminatorParams },
    /// Use the ground-truth kernel; gives the SR upper bound.
    GroundTruth,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub adapt: AdaptConfig,
    pub adapter: Option<SrAdapterSpec>,
    pub runs: usize,
    pub seed: u64,
    /// Center both kernels before kernel PSNR.
    pub align_kernel_psnr: bool,
    /// Border removed before image metrics; the scale factor when `None`.
    pub shave: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            adapt: AdaptConfig::default(),
            adapter: None,
            runs: 1,
            seed: 0,
            align_kernel_psnr: true,
            shave: None,
        }
    }
}

pub fn run_seed(seed: u64, run: usize, image_index: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, "run", run as u64), "image", image_index as u64)
}

struct Estimate {
    kernel: Kernel,
    initial: Option<Kernel>,
    steps: usize,
    degraded: bool,
}

fn estimate(
    lr: &crate::tensor::Image,
    gt: &Kernel,
    scale: usize,
    source: &KernelSource,
    opts: &EvalOptions,
    seed: u64,
) -> Result<Estimate> {
    match source {
        KernelSource::GroundTruth => Ok(Estimate {
            kernel: gt.clone(),
            initial: None,
            steps: 0,
            degraded: false,
        }),
        KernelSource::Model { g, d } => {
            let out = estimate_kernel_at_scale(lr, g, d, &opts.adapt, scale, seed)?;
            let mut k0 = postprocess_kernel(&g.derive_kernel())?;
            if scale == 4 {
                k0 = derive_x4_kernel(&k0)?;
            }
            Ok(Estimate {
                kernel: out.kernel,
                initial: Some(k0),
                steps: out.steps_run,
                degraded: out.degraded,
            })
        }
    }
}

fn evaluate_row(
    dir: &Path,
    manifest: &Manifest,
    index: usize,
    row: &ManifestRow,
    run: usize,
    source: &KernelSource,
    opts: &EvalOptions,
) -> EvalRecord {
    let scale = manifest.spec.scale;
    let mut rec = EvalRecord {
        image_id: row.image_id.clone(),
        scale,
        variant: manifest.spec.variant.as_str().to_string(),
        run,
        kernel_psnr: None,
        l_kcov: None,
        image_psnr: None,
        image_ssim: None,
        l_t: None,
        steps: 0,
        wall_time_s: 0.0,
        degraded: false,
        error: None,
    };
    let start = Instant::now();
    let result = (|| -> Result<()> {
        let (Some(lr_file), Some(k_file)) = (&row.lr_file, &row.kernel_file) else {
            return Err(Error::Empty(format!("row {} has no outputs ({})", row.image_id, row.status)));
        };
        let lr = read_image(&dir.join(lr_file))?;
        let gt = load_kernel(&dir.join(k_file))?;
        let est = estimate(&lr, &gt, scale, source, opts, run_seed(opts.seed, run, index))?;
        rec.steps = est.steps;
        rec.degraded = est.degraded;
        rec.kernel_psnr = Some(kernel_psnr(&gt, &est.kernel, opts.align_kernel_psnr)?);
        rec.l_kcov = Some(l_kcov(&gt, &est.kernel)?);
        if let Some(k0) = &est.initial {
            rec.l_t = Some(fallback_indicator(&est.kernel, k0, &gt)?);
        }
        if let Some(adapter) = &opts.adapter {
            let sr = run_sr(&lr, &est.kernel, scale, adapter)?;
            let hr = read_image(&row.source_file)?.crop(0, 0, row.hr_height, row.hr_width)?;
            let (p, s) = image_psnr_ssim_y(&sr, &hr, opts.shave.unwrap_or(scale))?;
            rec.image_psnr = Some(p);
            rec.image_ssim = Some(s);
        }
        Ok(())
    })();
    rec.wall_time_s = start.elapsed().as_secs_f64();
    if let Err(e) = result {
        warn!("{} run {run}: {e}", row.image_id);
        rec.error = Some(e.to_string());
    }
    rec
}

#[derive(Serialize)]
struct CsvRow<'a> {
    image_id: &'a str,
    scale: usize,
    variant: &'a str,
    run: usize,
    kernel_psnr: Option<f64>,
    l_kcov: Option<f64>,
    image_psnr: Option<f64>,
    image_ssim: Option<f64>,
    l_t: Option<f64>,
    steps: usize,
    wall_time_s: f64,
    degraded: bool,
    error: Option<&'a str>,
}

pub fn records_to_csv(records: &[EvalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.serialize(CsvRow {
            image_id: &r.image_id,
            scale: r.scale,
            variant: &r.variant,
            run: r.run,
            kernel_psnr: r.kernel_psnr,
            l_kcov: r.l_kcov,
            image_psnr: r.image_psnr,
            image_ssim: r.image_ssim,
            l_t: r.l_t,
            steps: r.steps,
            wall_time_s: r.wall_time_s,
            degraded: r.degraded,
            error: r.error.as_deref(),
        })?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    write_atomic(path, &records_to_csv(records)?)
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Archive {
            path: path.to_path_buf(),
            reason: format!("unexpected CSV header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Mean metrics of one (scale, variant) group; each is the mean over runs
/// of the per-run mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scale: usize,
    pub variant: String,
    pub images: usize,
    pub runs: usize,
    pub failures: usize,
    pub image_psnr: Option<f64>,
    pub image_ssim: Option<f64>,
    pub kernel_psnr: Option<f64>,
    pub l_kcov: Option<f64>,
    pub l_t: Option<f64>,
}

impl SummaryRow {
    /// `PSNR/SSIM/KPSNR/LKCOV`, missing entries shown as `-`.
    pub fn cell(&self) -> String {
        [self.image_psnr, self.image_ssim, self.kernel_psnr, self.l_kcov]
            .iter()
            .map(|v| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}")))
            .collect::<Vec<_>>()
            .join("/")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<13} {:>6} {:>4} {:>5}  PSNR/SSIM/KPSNR/LKCOV", "scale", "variant", "images", "runs", "fail")?;
        for r in &self.rows {
            writeln!(
                f,
                "x{:<5} {:<13} {:>6} {:>4} {:>5}  {}",
                r.scale,
                r.variant,
                r.images,
                r.runs,
                r.failures,
                r.cell()
            )?;
        }
        Ok(())
    }
}

fn mean_of_run_means(records: &[&EvalRecord], get: impl Fn(&EvalRecord) -> Option<f64>) -> Option<f64> {
    let mut per_run: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records {
        if let Some(v) = get(r) {
            let e = per_run.entry(r.run).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    if per_run.is_empty() {
        return None;
    }
    Some(per_run.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per_run.len() as f64)
}

pub fn summarize(records: &[EvalRecord]) -> Summary {
    let mut groups: BTreeMap<(usize, String), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.scale, r.variant.clone())).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((scale, variant), rs)| {
            let mut images: Vec<&str> = rs.iter().map(|r| r.image_id.as_str()).collect();
            images.sort_unstable();
            images.dedup();
            let mut runs: Vec<usize> = rs.iter().map(|r| r.run).collect();
            runs.sort_unstable();
            runs.dedup();
            SummaryRow {
                scale,
                variant,
                images: images.len(),
                runs: runs.len(),
                failures: rs.iter().filter(|r| r.error.is_some()).count(),
                image_psnr: mean_of_run_means(&rs, |r| r.image_psnr),
                image_ssim: mean_of_run_means(&rs, |r| r.image_ssim),
                kernel_psnr: mean_of_run_means(&rs, |r| r.kernel_psnr),
                l_kcov: mean_of_run_means(&rs, |r| r.l_kcov),
                l_t: mean_of_run_means(&rs, |r| r.l_t),
            }
        })
        .collect();
    Summary { rows }
}

/// Evaluates every usable manifest row `opts.runs` times and writes the
/// CSV. An empty benchmark still writes a header-only CSV, then errors.
pub fn evaluate(benchmark_dir: &Path, source: &KernelSource, opts: &EvalOptions, out_csv: &Path) -> Result<Summary> {
    opts.adapt.validate()?;
    if opts.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let manifest = Manifest::load(benchmark_dir)?;
    let jobs: Vec<(usize, usize)> = (0..opts.runs)
        .flat_map(|run| (0..manifest.rows.len()).map(move |i| (run, i)))
        .collect();
    if manifest.rows.is_empty() {
        write_records(out_csv, &[])?;
        return Err(Error::Empty(format!("benchmark {} has no images", benchmark_dir.display())));
    }
    info!("evaluating {} rows x {} runs", manifest.rows.len(), opts.runs);
    let records = parallel::map(&jobs, |&(run, i)| {
        evaluate_row(benchmark_dir, &manifest, i, &manifest.rows[i], run, source, opts)
    });
    write_records(out_csv, &records)?;
    Ok(summarize(&records))
}
