//! Procedural natural-looking RGB images for experiments without a photo
//! dataset: multi-octave value noise, hard-edged shapes and stripe fields.
//! Edges at many orientations and recurring structure across scales are
//! what the kernel estimator feeds on.

use rand::Rng as _;

use crate::rng;
use crate::tensor::{Image, Tensor};

fn value_noise(h: usize, w: usize, cell: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        let sy = ty * ty * (3.0 - 2.0 * ty);
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let sx = tx * tx * (3.0 - 2.0 * tx);
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(y0, x0) * (1.0 - sx) + g(y0, x0 + 1) * sx;
            let bot = g(y0 + 1, x0) * (1.0 - sx) + g(y0 + 1, x0 + 1) * sx;
            out[y * w + x] = top * (1.0 - sy) + bot * sy;
        }
    }
    out
}

enum Shape {
    Rect { cy: f64, cx: f64, hh: f64, hw: f64, cos: f64, sin: f64 },
    Disk { cy: f64, cx: f64, r: f64 },
    Stripes { cy: f64, cx: f64, r: f64, period: f64, cos: f64, sin: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { cy, cx, hh, hw, cos, sin } => {
                let (dy, dx) = (y - cy, x - cx);
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                u.abs() <= hw && v.abs() <= hh
            }
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Stripes { cy, cx, r, period, cos, sin } => {
                let (dy, dx) = (y - cy, x - cx);
                if dy * dy + dx * dx > r * r {
                    return false;
                }
                let u = cos * dx + sin * dy;
                (u / period).rem_euclid(1.0) < 0.5
            }
        }
    }
}

/// A `h × w` RGB image in `[0,1]`, deterministic in `seed`.
pub fn textured_image(h: usize, w: usize, seed: u64) -> Image {
    let mut r = rng::seeded(seed);
    let plane = h * w;
    let mut t = Tensor::zeros(3, h, w);
    // Background: tinted 1/f value noise.
    for c in 0..3 {
        let tint = r.random_range(0.6..1.0);
        let mut acc = vec![0.0; plane];
        let mut amp = 0.5;
        for cell in [64usize, 32, 16, 8, 4] {
            let n = value_noise(h, w, cell, &mut r);
            for (a, v) in acc.iter_mut().zip(&n) {
                *a += amp * (v - 0.5);
            }
            amp *= 0.6;
        }
        for (dst, a) in t.plane_mut(c).iter_mut().zip(&acc) {
            *dst = tint * (0.5 + a);
        }
    }
    // Foreground shapes with hard edges.
    let n_shapes = 12 + (h * w) / 2500;
    let size = h.min(w) as f64;
    for _ in 0..n_shapes {
        let cy = r.random_range(0.0..h as f64);
        let cx = r.random_range(0.0..w as f64);
        let ang: f64 = r.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = ang.sin_cos();
        let shape = match r.random_range(0..3) {
            0 => Shape::Rect {
                cy,
                cx,
                hh: r.random_range(0.02..0.15) * size,
                hw: r.random_range(0.02..0.15) * size,
                cos,
                sin,
            },
            1 => Shape::Disk {
                cy,
                cx,
                r: r.random_range(0.02..0.12) * size,
            },
            _ => Shape::Stripes {
                cy,
                cx,
                r: r.random_range(0.05..0.2) * size,
                period: r.random_range(3.0..12.0),
                cos,
                sin,
            },
        };
        let color = [r.random::<f64>(), r.random::<f64>(), r.random::<f64>()];
        let alpha = r.random_range(0.6..1.0);
        for y in 0..h {
            for x in 0..w {
                if shape.contains(y as f64 + 0.5, x as f64 + 0.5) {
                    for (c, col) in color.iter().enumerate() {
                        let v = &mut t.data[c * plane + y * w + x];
                        *v = (1.0 - alpha) * *v + alpha * col;
                    }
                }
            }
        }
    }
    // Fine grain.
    for v in t.data.iter_mut() {
        *v = (*v + 0.01 * (r.random::<f64>() - 0.5)).clamp(0.0, 1.0);
    }
    Image::new(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = textured_image(40, 50, 3);
        assert_eq!(a, textured_image(40, 50, 3));
        assert_ne!(a, textured_image(40, 50, 4));
        assert_eq!((a.channels(), a.height(), a.width()), (3, 40, 50));
        assert!(a.tensor().data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
