use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use metakernel::adapt::{estimate_kernel_at_scale, TraceMode};
use metakernel::harness::benchmark::{gen_benchmark, BenchmarkSpec, Variant};
use metakernel::harness::config::RunConfig;
use metakernel::harness::evaluate::{evaluate, read_records, summarize, EvalOptions, KernelSource};
use metakernel::harness::load_dataset;
use metakernel::harness::plot::{cells_from_files, cells_from_trace, plot_kernels, PlotStyle};
use metakernel::harness::records::JsonlWriter;
use metakernel::harness::sr::SrAdapterSpec;
use metakernel::io::archive::{load_checkpoint, save_kernel};
use metakernel::io::png::read_image;
use metakernel::metalearn::{meta_train_from, MetaState};
use metakernel::metrics::{correlate_gains, ImageMetric, KernelMetric};
use metakernel::parallel::ExecMode;

#[derive(Parser)]
#[command(name = "metakernel", version, about = "Meta-learned blind SR kernel estimation")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Meta-train the kernel GAN on a directory of HR PNGs.
    MetaTrain {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides `meta.n_steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// JSON-lines loss log (default: <out>/train_log.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Estimate the blur kernel of an LR image, or of every PNG in a directory.
    Adapt {
        /// An LR PNG, or a directory of them.
        #[arg(long, visible_alias = "input")]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Kernel file; a directory when `--image` is one (`<stem>.kernel` per image).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `adapt.steps`.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes the kernels at steps 25/50/100/200 as JSON (a directory in directory mode).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Build a synthetic-degradation benchmark from HR PNGs.
    GenBench {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long, value_enum, default_value_t = VariantArg::Gaussian)]
        variant: VariantArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate kernels over a benchmark and write per-image metrics as CSV.
    Evaluate {
        #[arg(long)]
        bench: PathBuf,
        /// Model checkpoint; required unless --gt-kernel.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Use the ground-truth kernels instead of estimating them.
        #[arg(long)]
        gt_kernel: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run SR and compute image metrics.
        #[arg(long, value_enum)]
        sr: Option<SrArg>,
        /// Command template for `--sr external`.
        #[arg(long)]
        sr_command: Option<String>,
        #[arg(long, default_value_t = 600.0)]
        sr_timeout: f64,
        /// Compare kernels as stored instead of centering them first.
        #[arg(long)]
        no_align: bool,
        #[arg(long)]
        shave: Option<usize>,
    },
    /// Summarize an evaluation CSV, optionally correlating gains against another.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = KernelMetricArg::LKcov)]
        kernel_metric: KernelMetricArg,
        #[arg(long, value_enum, default_value_t = ImageMetricArg::Psnr)]
        image_metric: ImageMetricArg,
        #[arg(long)]
        json: bool,
    },
    /// Render kernel files or an adaptation trace as a heatmap montage.
    PlotKernel {
        #[arg(long, num_args = 1.., conflicts_with = "trace")]
        kernels: Vec<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        columns: usize,
        #[arg(long, default_value_t = 12)]
        zoom: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Gaussian,
    NonGaussian,
    Noisy,
}

#[derive(Clone, Copy, ValueEnum)]
enum SrArg {
    Bicubic,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelMetricArg {
    KernelPsnr,
    LKcov,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageMetricArg {
    Psnr,
    Ssim,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn meta_train_cmd(
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    seed: u64,
    steps: Option<usize>,
    resume: Option<&Path>,
    log: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(n) = steps {
        cfg.meta.n_steps = n;
    }
    cfg.meta.validate()?;
    let dataset = load_dataset(data)?;
    std::fs::create_dir_all(out)?;
    let state = match resume {
        Some(p) => MetaState::from_checkpoint(load_checkpoint(p)?, &cfg.meta)?,
        None => MetaState::init(&cfg.meta, seed)?,
    };
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| out.join("train_log.jsonl"));
    let mut writer = JsonlWriter::append(&log_path)?;
    let mut log_err = None;
    info!("meta-training on {} images from step {}", dataset.len(), state.step);
    let state = meta_train_from(state, &dataset, &cfg.meta, Some(out), |rec| {
        if log_err.is_none() {
            log_err = writer.write(rec).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).context("writing training log");
    }
    println!("finished at outer step {}; checkpoints in {}", state.step, out.display());
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

#[allow(clippy::too_many_arguments)]
fn adapt_cmd(
    image: &Path,
    ckpt: &Path,
    out: &Path,
    scale: usize,
    config: Option<&Path>,
    steps: Option<usize>,
    seed: u64,
    trace: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?.adapt;
    if let Some(n) = steps {
        cfg.steps = n;
    }
    if trace.is_some() {
        cfg.trace = TraceMode::Milestones;
    }
    let ck = load_checkpoint(ckpt)?;
    // (input, kernel output, trace output)
    let jobs: Vec<(PathBuf, PathBuf, Option<PathBuf>)> = if image.is_dir() {
        std::fs::create_dir_all(out)?;
        if let Some(t) = trace {
            std::fs::create_dir_all(t)?;
        }
        let files = png_files(image)?;
        if files.is_empty() {
            bail!("no PNG files in {}", image.display());
        }
        files
            .into_iter()
            .map(|f| {
                let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let k = out.join(format!("{stem}.kernel"));
                let t = trace.map(|t| t.join(format!("{stem}.trace.json")));
                (f, k, t)
            })
            .collect()
    } else {
        vec![(image.to_path_buf(), out.to_path_buf(), trace.map(Path::to_path_buf))]
    };
    for (input, kernel_out, trace_out) in jobs {
        let lr = read_image(&input)?;
        let start = Instant::now();
        let res = estimate_kernel_at_scale(&lr, &ck.generator, &ck.discriminator, &cfg, scale, seed)
            .with_context(|| format!("adapting to {}", input.display()))?;
        save_kernel(&kernel_out, &res.kernel)?;
        if let Some(t) = trace_out {
            std::fs::write(t, serde_json::to_vec_pretty(&res.trace)?)?;
        }
        println!(
            "wrote {} ({} steps{}, {:.2}s)",
            kernel_out.display(),
            res.steps_run,
            if res.degraded { ", degraded" } else { "" },
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.sequential {
        ExecMode::set(ExecMode::Sequential);
    }
    match cli.command {
        Cmd::MetaTrain {
            data,
            out,
            config,
            seed,
            steps,
            resume,
            log,
        } => meta_train_cmd(&data, &out, config.as_deref(), seed, steps, resume.as_deref(), log.as_deref()),
        Cmd::Adapt {
            image,
            ckpt,
            out,
            scale,
            config,
            steps,
            seed,
            trace,
        } => adapt_cmd(&image, &ckpt, &out, scale, config.as_deref(), steps, seed, trace.as_deref()),
        Cmd::GenBench {
            source,
            out,
            scale,
            variant,
            seed,
        } => {
            let variant = match variant {
                VariantArg::Gaussian => Variant::Gaussian,
                VariantArg::NonGaussian => Variant::NonGaussian,
                VariantArg::Noisy => Variant::Noisy,
            };
            let m = gen_benchmark(&BenchmarkSpec::new(source, scale, variant, seed), &out)?;
            let ok = m.rows.iter().filter(|r| r.ok()).count();
            println!("{ok} of {} images written to {} (spec {})", m.rows.len(), out.display(), m.spec_hash);
            Ok(())
        }
        Cmd::Evaluate {
            bench,
            ckpt,
            gt_kernel,
            out,
            runs,
            config,
            steps,
            seed,
            sr,
            sr_command,
            sr_timeout,
            no_align,
            shave,
        } => {
            let mut opts = EvalOptions {
                adapt: load_config(config.as_deref())?.adapt,
                runs,
                seed,
                align_kernel_psnr: !no_align,
                shave,
                ..EvalOptions::default()
            };
            if let Some(n) = steps {
                opts.adapt.steps = n;
            }
            opts.adapter = match sr {
                None => None,
                Some(SrArg::Bicubic) => Some(SrAdapterSpec::BuiltinBicubic),
                Some(SrArg::External) => Some(SrAdapterSpec::ExternalProcess {
                    command: sr_command.context("--sr external needs --sr-command")?,
                    working_dir: None,
                    timeout_s: sr_timeout,
                }),
            };
            let source = match (gt_kernel, ckpt) {
                (true, _) => KernelSource::GroundTruth,
                (false, Some(p)) => {
                    let ck = load_checkpoint(&p)?;
                    KernelSource::Model {
                        g: ck.generator,
                        d: ck.discriminator,
                    }
                }
                (false, None) => bail!("either --ckpt or --gt-kernel is required"),
            };
            let summary = evaluate(&bench, &source, &opts, &out)?;
            print!("{summary}");
            Ok(())
        }
        Cmd::Report {
            csv,
            compare,
            kernel_metric,
            image_metric,
            json,
        } => {
            let records = read_records(&csv)?;
            let summary = summarize(&records);
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{summary}");
            }
            if let Some(other) = compare {
                let km = match kernel_metric {
                    KernelMetricArg::KernelPsnr => KernelMetric::KernelPsnr,
                    KernelMetricArg::LKcov => KernelMetric::LKcov,
                };
                let im = match image_metric {
                    ImageMetricArg::Psnr => ImageMetric::Psnr,
                    ImageMetricArg::Ssim => ImageMetric::Ssim,
                };
                let (r, rho) = correlate_gains(&records, &read_records(&other)?, km, im)?;
                println!("gain correlation: pearson {r:.4} spearman {rho:.4}");
            }
            Ok(())
        }
        Cmd::PlotKernel {
            kernels,
            trace,
            out,
            columns,
            zoom,
        } => {
            let cells = match trace {
                Some(t) => {
                    let text = std::fs::read_to_string(&t).with_context(|| format!("reading {}", t.display()))?;
                    cells_from_trace(&serde_json::from_str(&text)?)?
                }
                None => cells_from_files(&kernels)?,
            };
            let style = PlotStyle {
                columns,
                zoom,
                ..PlotStyle::default()
            };
            let meta = plot_kernels(&cells, &style, &out)?;
            println!("wrote {} ({} cells)", out.display(), meta.cells);
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
