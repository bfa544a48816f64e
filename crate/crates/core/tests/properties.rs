mod common;

use proptest::prelude::*;

use common::noise_tensor;
use metakernel::adapt::postprocess_kernel;
use metakernel::degrade::blur_subsample;
use metakernel::io::archive::{kernel_from_bytes, kernel_to_bytes};
use metakernel::kernelgen::{
    center_of_mass, derive_x4_kernel, discretized_covariance, perturb_kernel_multiplicative, sample_gaussian_kernel,
    shift_kernel_to_center, GaussianSpec, Kernel, Provenance,
};
use metakernel::metalearn::{get_interval_loss_weights, ScheduleClamp};
use metakernel::metrics::{kernel_psnr, l_kcov, pearson, spearman, PSNR_CAP};
use metakernel::nets::{init_generator, GeneratorConfig};
use metakernel::tensor::{Image, Tensor};

fn spec() -> impl Strategy<Value = GaussianSpec> {
    (0.0..std::f64::consts::PI, 0.35..5.0f64, 0.35..5.0f64).prop_map(|(t, a, b)| GaussianSpec::new(t, a, b).unwrap())
}

fn kernel11() -> impl Strategy<Value = Kernel> {
    spec().prop_map(|s| sample_gaussian_kernel(&s, 11).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_kernels_are_pmfs(k in kernel11()) {
        prop_assert!((k.sum() - 1.0).abs() < 1e-12);
        prop_assert!(k.values().iter().all(|v| *v >= 0.0));
        // Zero-mean Gaussian on a centered grid: point symmetric.
        let n = k.values().len();
        for i in 0..n {
            prop_assert!((k.values()[i] - k.values()[n - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn perturbed_kernels_stay_normalized(k in kernel11(), frac in 0.0..1.0f64, seed in any::<u64>()) {
        let p = perturb_kernel_multiplicative(&k, frac, seed);
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        prop_assert!(p.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn centering_removes_offset_and_keeps_mass(k in kernel11(), frac in 0.0..0.4f64, seed in any::<u64>()) {
        let c = shift_kernel_to_center(&perturb_kernel_multiplicative(&k, frac, seed)).unwrap();
        let (dx, dy) = center_of_mass(&c).unwrap();
        prop_assert!(dx.abs() < 1e-3 && dy.abs() < 1e-3, "residual offset ({dx}, {dy})");
        prop_assert!((c.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn postprocess_yields_centered_pmf(vals in prop::collection::vec(-0.05..0.3f64, 121)) {
        prop_assume!(vals.iter().any(|v| *v > 0.0));
        let raw = Kernel::new(11, 2, Provenance::Estimated, vals).unwrap();
        let k = postprocess_kernel(&raw).unwrap();
        prop_assert!((k.sum() - 1.0).abs() < 1e-12);
        prop_assert!(k.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn x4_kernel_is_normalized_and_wider(k in kernel11()) {
        let k4 = derive_x4_kernel(&k).unwrap();
        prop_assert_eq!(k4.size(), 21);
        prop_assert!((k4.sum() - 1.0).abs() < 1e-12);
        let (l2, _) = discretized_covariance(&k).unwrap().eigenvalues();
        let (l4, _) = discretized_covariance(&k4).unwrap().eigenvalues();
        prop_assert!(l4 > l2);
    }

    #[test]
    fn kernel_metrics_are_symmetric_with_exact_identity(a in kernel11(), b in kernel11()) {
        prop_assert_eq!(kernel_psnr(&a, &a, true).unwrap(), PSNR_CAP);
        prop_assert_eq!(l_kcov(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(l_kcov(&a, &b).unwrap(), l_kcov(&b, &a).unwrap());
        prop_assert_eq!(kernel_psnr(&a, &b, false).unwrap(), kernel_psnr(&b, &a, false).unwrap());
        prop_assert!(l_kcov(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn kernel_archive_round_trips(vals in prop::collection::vec(-1.0..1.0f64, 121)) {
        let k = Kernel::new(11, 2, Provenance::Estimated, vals).unwrap();
        let back = kernel_from_bytes(std::path::Path::new("mem"), &kernel_to_bytes(&k).unwrap()).unwrap();
        prop_assert_eq!(back, k);
    }

    #[test]
    fn degradation_is_linear(k in kernel11(), a in -2.0..2.0f64, b in -2.0..2.0f64, seed in 0u64..1000) {
        let x = noise_tensor(1, 24, 24, seed);
        let y = noise_tensor(1, 24, 24, seed + 1);
        let mut mix = x.clone();
        mix.scale_inplace(a);
        mix.axpy(b, &y);
        let dx = blur_subsample(&Image::new(x), &k, 2).unwrap();
        let dy = blur_subsample(&Image::new(y), &k, 2).unwrap();
        let dm = blur_subsample(&Image::new(mix), &k, 2).unwrap();
        for i in 0..dm.tensor().len() {
            let expect = a * dx.tensor().data[i] + b * dy.tensor().data[i];
            prop_assert!((dm.tensor().data[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_images_survive_degradation(k in kernel11(), c in 0.0..1.0f64) {
        let img = Image::new(Tensor::from_vec(1, 20, 20, vec![c; 400]).unwrap());
        let out = blur_subsample(&img, &k, 2).unwrap();
        prop_assert!(out.tensor().data.iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn interval_weights_form_a_distribution(j in 0usize..200_000, count in 1usize..8) {
        let w = get_interval_loss_weights(j, count, ScheduleClamp::Max);
        prop_assert_eq!(w.len(), count);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let later = get_interval_loss_weights(j + 1, count, ScheduleClamp::Max);
        prop_assert!(later[count - 1] >= w[count - 1]);
    }

    #[test]
    fn correlations_bounded_and_rank_invariant(xs in prop::collection::vec(-10.0..10.0f64, 4..20), seed in 0u64..100) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x + ((i as u64 * 7 + seed) % 5) as f64).collect();
        if let (Ok(r), Ok(rho)) = (pearson(&xs, &ys), spearman(&xs, &ys)) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
            // Strictly increasing maps preserve ranks.
            let warped: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
            prop_assert!((spearman(&warped, &ys).unwrap() - rho).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generator_is_linear_in_its_input(seed in 0u64..1000, a in -2.0..2.0f64) {
        let g = init_generator(2, &GeneratorConfig { width: 4, init_noise: 0.5 }, seed).unwrap();
        let x = noise_tensor(1, 22, 22, seed);
        let y = noise_tensor(1, 22, 22, seed + 7);
        let mut mix = x.clone();
        mix.scale_inplace(a);
        mix.axpy(1.0, &y);
        let gx = g.forward(&x).unwrap();
        let gy = g.forward(&y).unwrap();
        let gm = g.forward(&mix).unwrap();
        for i in 0..gm.len() {
            prop_assert!((gm.data[i] - (a * gx.data[i] + gy.data[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn generator_output_equals_kernel_blur_subsample(seed in 0u64..1000) {
        // The stride-2 generator is a valid-region blur with the decoded kernel
        // followed by ×2 subsampling.
        let g = init_generator(2, &GeneratorConfig { width: 4, init_noise: 0.5 }, seed).unwrap();
        let k = g.derive_kernel();
        let x = noise_tensor(1, 24, 24, seed + 3);
        let out = g.forward(&x).unwrap();
        for oy in 0..out.height {
            for ox in 0..out.width {
                let (cy, cx) = (2 * oy + 5, 2 * ox + 5);
                let mut acc = 0.0;
                for i in 0..11 {
                    for j in 0..11 {
                        acc += k.at(i, j) * x.at(0, cy + 5 - i, cx + 5 - j);
                    }
                }
                prop_assert!((out.at(0, oy, ox) - acc).abs() < 1e-10);
            }
        }
    }
}
