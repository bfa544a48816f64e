//! One seed of the smoke experiment with overridable sizes:
//! `cargo run --release --example smoke -- <steps> <g_width> <d_width> <seed>`.

use std::time::Instant;

use metakernel::harness::smoke::{run_smoke, SmokeConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let gw: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let dw: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = SmokeConfig::default();
    cfg.meta.n_steps = steps;
    cfg.meta.generator.width = gw;
    cfg.meta.discriminator.width = dw;
    let t = Instant::now();
    let r = run_smoke(&cfg, seed, |rec| {
        if rec.step % 50 == 0 || rec.step <= 2 {
            eprintln!("{:>5} g {:.4} d {:.4} kpix {:.4} t {:.1}s", rec.step, rec.meta_g, rec.meta_d, rec.kpix, t.elapsed().as_secs_f64());
        }
    })
    .unwrap();
    println!("seed {seed} time {:.1}s", t.elapsed().as_secs_f64());
    for (name, a) in [("meta200", &r.meta_adapted), ("meta0", &r.meta_step0), ("rand200", &r.random_adapted)] {
        println!("{name:8} kpix {:.4} lkcov {:.4}  {:?}", a.mean_kpix(), a.mean_l_kcov(), a.kpix.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }
    println!("pass {}", r.directional_pass());
}
