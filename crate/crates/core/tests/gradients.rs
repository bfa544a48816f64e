mod common;

use common::{fd_check, noise_tensor, texture};
use metakernel::kernelgen::{sample_gaussian_kernel, shift_kernel_to_center, GaussianSpec};
use metakernel::losses::{composite, LossWeights, PatchBatch};
use metakernel::nets::{
    init_discriminator, init_generator, DiscriminatorConfig, DiscriminatorParams, GeneratorConfig, GeneratorParams,
};

const H: f64 = 1e-4;
const REL: f64 = 1e-4;
const FLOOR: f64 = 1e-8;

fn setup(seed: u64) -> (GeneratorParams, DiscriminatorParams, PatchBatch) {
    let g = init_generator(2, &GeneratorConfig { width: 4, init_noise: 0.3 }, seed).unwrap();
    let mut d = init_discriminator(&DiscriminatorConfig { width: 4 }, seed + 1).unwrap();
    d.refresh_spectral();
    let x = texture(26, 26, seed + 2);
    let real = x.crop(0, 0, 13, 13).unwrap();
    (g, d, PatchBatch::single(x, real))
}

#[test]
fn derive_kernel_gradient_matches_finite_differences() {
    let g = init_generator(2, &GeneratorConfig { width: 8, init_noise: 0.3 }, 5).unwrap();
    let w = noise_tensor(1, 11, 11, 6).data;
    let analytic = g.derive_kernel_backward(&w);
    let rep = fd_check(&g.params, &analytic, H, REL, FLOOR, |p| {
        let gp = GeneratorParams::from_params(8, p.clone()).unwrap();
        gp.derive_kernel().values().iter().zip(&w).map(|(a, b)| a * b).sum()
    });
    assert!(rep.passed(0.0), "{rep:?}");
}

#[test]
fn composite_gradients_match_finite_differences() {
    let gt = shift_kernel_to_center(&sample_gaussian_kernel(&GaussianSpec::new(0.4, 1.5, 0.8).unwrap(), 11).unwrap())
        .unwrap();
    for seed in [1u64, 2] {
        let (g, d, batch) = setup(seed * 10);
        for (weights, with_gt) in [
            (LossWeights { omega: 0.0, eta: 1.0, zeta: 0.5 }, false),
            (LossWeights::default(), true),
        ] {
            let k = with_gt.then_some(&gt);
            let ev = composite(&g, &d, &batch, &weights, k, true).unwrap();
            let rep = fd_check(&g.params, ev.grad_g.as_ref().unwrap(), H, REL, FLOOR, |p| {
                let gp = GeneratorParams::from_params(4, p.clone()).unwrap();
                composite(&gp, &d, &batch, &weights, k, false).unwrap().l_g
            });
            assert!(rep.passed(0.05), "G seed {seed}: {rep:?}");
            let rep = fd_check(&d.params, ev.grad_d.as_ref().unwrap(), H, REL, FLOOR, |p| {
                let dp = DiscriminatorParams::from_parts(4, p.clone(), d.buffers.clone()).unwrap();
                composite(&g, &dp, &batch, &weights, k, false).unwrap().l_d
            });
            assert!(rep.passed(0.05), "D seed {seed}: {rep:?}");
        }
    }
}
