use std::fs;
use std::path::Path;

use metakernel::degrade::degrade_image;
use metakernel::error::Error;
use metakernel::harness::benchmark::{benchmark_kernel, gen_benchmark, BenchmarkSpec, Manifest, Variant};
use metakernel::harness::evaluate::{evaluate, read_records, EvalOptions, KernelSource};
use metakernel::harness::plot::{plot_kernels, PlotCell, PlotStyle};
use metakernel::harness::records::{read_jsonl, JsonlWriter};
use metakernel::harness::sr::{bicubic_upscale, nearest_upscale, run_sr, SrAdapterSpec, CACHE_DIR_ENV};
use metakernel::harness::synth::textured_image;
use metakernel::io::png::{read_image, write_png};
use metakernel::kernelgen::{sample_gaussian_kernel, GaussianSpec, Kernel};
use metakernel::metalearn::OuterRecord;
use metakernel::metrics::image_psnr_ssim_y;
use metakernel::nets::{init_discriminator, init_generator, DiscriminatorConfig, GeneratorConfig};
use metakernel::tensor::Image;

fn write_sources(dir: &Path, n: usize, size: usize) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        write_png(&dir.join(format!("s{i}.png")), &textured_image(size, size, 40 + i as u64)).unwrap();
    }
}

#[test]
fn noisy_variant_residual_matches_level() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("hr");
    write_sources(&src, 2, 160);
    let spec = BenchmarkSpec::new(&src, 2, Variant::Noisy, 5);
    let out = tmp.path().join("bench");
    let m = gen_benchmark(&spec, &out).unwrap();
    let (mut ss, mut n) = (0.0, 0usize);
    for row in &m.rows {
        let hr = read_image(&row.source_file).unwrap();
        let (k, _) = benchmark_kernel(&spec, row.kernel_seed).unwrap();
        let clean = degrade_image(&hr, &k, 2, 0.0, 0).unwrap();
        let noisy = read_image(&out.join(row.lr_file.as_ref().unwrap())).unwrap();
        for (c, v) in clean.tensor().data.iter().zip(&noisy.tensor().data) {
            // Away from the clipping bounds the residual is pure AWGN.
            if (0.15..0.85).contains(c) {
                ss += (v - c) * (v - c);
                n += 1;
            }
        }
    }
    let sigma = (ss / n as f64).sqrt();
    let target = 10.0 / 255.0;
    assert!(n > 10_000);
    assert!((sigma - target).abs() < 0.05 * target, "sigma {sigma} vs {target}");
}

#[test]
fn builtin_sr_shape_and_ordering() {
    let lr = textured_image(50, 50, 3);
    let up = run_sr(&lr, &Kernel::delta(11, 2).unwrap(), 2, &SrAdapterSpec::BuiltinBicubic).unwrap();
    assert_eq!((up.height(), up.width(), up.channels()), (100, 100, 3));

    let hr = textured_image(128, 128, 8);
    let k = sample_gaussian_kernel(&GaussianSpec::new(0.0, 0.9, 0.9).unwrap(), 11).unwrap();
    let lr = degrade_image(&hr, &k, 2, 0.0, 0).unwrap();
    let (p_bic, _) = image_psnr_ssim_y(&bicubic_upscale(&lr, 2).unwrap(), &hr, 8).unwrap();
    let (p_nn, _) = image_psnr_ssim_y(&nearest_upscale(&lr, 2).unwrap(), &hr, 8).unwrap();
    assert!(p_bic > p_nn, "bicubic {p_bic} vs nearest {p_nn}");
}

// Everything that touches the cache-dir variable lives in this one test.
#[test]
fn external_adapter_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    fs::create_dir_all(&cache).unwrap();
    std::env::set_var(CACHE_DIR_ENV, &cache);
    let lr = textured_image(20, 20, 1);
    let k = Kernel::delta(11, 2).unwrap();
    let prepared = tmp.path().join("prepared.png");
    let expected = textured_image(40, 40, 2);
    write_png(&prepared, &expected).unwrap();
    let expected = read_image(&prepared).unwrap();
    let ext = |command: String, timeout_s: f64| SrAdapterSpec::ExternalProcess {
        command,
        working_dir: None,
        timeout_s,
    };

    let got = run_sr(&lr, &k, 2, &ext(format!("cp {} {{output}}", prepared.display()), 30.0)).unwrap();
    assert_eq!(got, expected);
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 0);

    // Inputs follow the exchange protocol.
    let check = "test -f {input} && test -f {kernel} && test \"$(cat {dir}/scale.txt)\" = {scale} && cp {input} {output}";
    let got = run_sr(&lr, &k, 2, &ext(check.into(), 30.0)).unwrap();
    assert_eq!(got.height(), 20);

    match run_sr(&lr, &k, 2, &ext("echo hello; echo oops >&2".into(), 30.0)) {
        Err(Error::Adapter { stdout, stderr, .. }) => {
            assert_eq!(stdout.trim(), "hello");
            assert_eq!(stderr.trim(), "oops");
        }
        other => panic!("expected missing-output error, got {other:?}"),
    }
    assert!(matches!(run_sr(&lr, &k, 2, &ext("exit 3".into(), 30.0)), Err(Error::Adapter { .. })));

    let start = std::time::Instant::now();
    match run_sr(&lr, &k, 2, &ext("sleep 30".into(), 0.3)) {
        Err(Error::Adapter { reason, .. }) => assert!(reason.contains("timed out"), "{reason}"),
        other => panic!("expected timeout, got {other:?}"),
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 0, "exchange dirs left behind");
    std::env::remove_var(CACHE_DIR_ENV);
}

#[test]
fn multi_run_summary_is_mean_of_run_means() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("hr");
    write_sources(&src, 3, 96);
    let bench = tmp.path().join("bench");
    gen_benchmark(&BenchmarkSpec::new(&src, 2, Variant::Gaussian, 1), &bench).unwrap();
    let g = init_generator(2, &GeneratorConfig { width: 4, init_noise: 0.1 }, 1).unwrap();
    let d = init_discriminator(&DiscriminatorConfig { width: 4 }, 2).unwrap();
    let mut opts = EvalOptions {
        runs: 5,
        seed: 11,
        adapter: Some(SrAdapterSpec::BuiltinBicubic),
        ..EvalOptions::default()
    };
    opts.adapt.steps = 3;
    opts.adapt.d_patch = 16;
    let csv = tmp.path().join("eval.csv");
    let summary = evaluate(&bench, &KernelSource::Model { g, d }, &opts, &csv).unwrap();
    let recs = read_records(&csv).unwrap();
    assert_eq!(recs.len(), 15);
    assert!(recs.iter().all(|r| r.error.is_none() && r.steps == 3 && r.l_t.is_some()));
    // Different seeds per run give different estimates.
    assert_ne!(recs[0].l_kcov, recs[3].l_kcov);
    let row = &summary.rows[0];
    assert_eq!((row.images, row.runs), (3, 5));
    let run_means: Vec<f64> = (0..5)
        .map(|run| {
            let v: Vec<f64> = recs.iter().filter(|r| r.run == run).map(|r| r.l_kcov.unwrap()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let expect = run_means.iter().sum::<f64>() / 5.0;
    assert!((row.l_kcov.unwrap() - expect).abs() < 1e-12);
    let flat = recs.iter().map(|r| r.image_psnr.unwrap()).sum::<f64>() / 15.0;
    assert!((row.image_psnr.unwrap() - flat).abs() < 1e-9);
}

#[test]
fn evaluation_continues_past_bad_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("hr");
    write_sources(&src, 2, 48);
    let bench = tmp.path().join("bench");
    let m = gen_benchmark(&BenchmarkSpec::new(&src, 2, Variant::Gaussian, 1), &bench).unwrap();
    fs::remove_file(bench.join(m.rows[0].kernel_file.as_ref().unwrap())).unwrap();
    let csv = tmp.path().join("eval.csv");
    evaluate(&bench, &KernelSource::GroundTruth, &EvalOptions::default(), &csv).unwrap();
    let recs = read_records(&csv).unwrap();
    assert!(recs[0].error.is_some());
    assert!(recs[1].error.is_none());
}

#[test]
fn benchmark_is_reproducible_and_spec_hash_tracks_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("hr");
    write_sources(&src, 2, 48);
    let spec = BenchmarkSpec::new(&src, 4, Variant::NonGaussian, 3);
    let a = gen_benchmark(&spec, &tmp.path().join("a")).unwrap();
    let b = gen_benchmark(&spec, &tmp.path().join("b")).unwrap();
    assert_eq!(a, b);
    for f in a.listed_files() {
        assert_eq!(fs::read(tmp.path().join("a").join(&f)).unwrap(), fs::read(tmp.path().join("b").join(&f)).unwrap());
    }
    assert_eq!(Manifest::load(&tmp.path().join("a")).unwrap(), a);
    let other = BenchmarkSpec::new(&src, 4, Variant::NonGaussian, 4);
    assert_ne!(spec.hash().unwrap(), other.hash().unwrap());
}

#[test]
fn single_kernel_plot_has_one_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let k = sample_gaussian_kernel(&GaussianSpec::new(0.3, 1.2, 0.7).unwrap(), 11).unwrap();
    let cell = PlotCell {
        size: 11,
        values: k.values().to_vec(),
        step: Some(200),
    };
    let out = tmp.path().join("k.png");
    let meta = plot_kernels(&[cell], &PlotStyle::default(), &out).unwrap();
    assert_eq!(meta.cells, 1);
    let img: Image = read_image(&out).unwrap();
    assert_eq!(img.width(), 11 * 12 + 8);
}

#[test]
fn jsonl_log_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("log.jsonl");
    let recs: Vec<OuterRecord> = (0..3)
        .map(|i| OuterRecord {
            step: i + 1,
            meta_g: 0.1 * i as f64,
            meta_d: 0.5,
            kpix: 1.0 / 3.0,
            resampled: 0,
        })
        .collect();
    {
        let mut w = JsonlWriter::append(&p).unwrap();
        for r in &recs[..2] {
            w.write(r).unwrap();
        }
    }
    JsonlWriter::append(&p).unwrap().write(&recs[2]).unwrap();
    let back: Vec<OuterRecord> = read_jsonl(&p).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back[2].kpix, recs[2].kpix);
}
