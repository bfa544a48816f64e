//! Blur kernels: sampling, perturbation, x4 derivation, centering and covariance.
//!
//! Kernels are square row-major grids. Coordinates follow image convention:
//! `x` is the column index, `y` the row index, and the grid center sits at
//! `((m - 1) / 2, (m - 1) / 2)`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Side length of x2 kernels.
pub const X2_KERNEL_SIZE: usize = 11;
/// Side length of x4 kernels.
pub const X4_KERNEL_SIZE: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sampled,
    Perturbed,
    DerivedX4,
    Estimated,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Sampled => "sampled",
            Provenance::Perturbed => "perturbed",
            Provenance::DerivedX4 => "derived_x4",
            Provenance::Estimated => "estimated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sampled" => Some(Provenance::Sampled),
            "perturbed" => Some(Provenance::Perturbed),
            "derived_x4" => Some(Provenance::DerivedX4),
            "estimated" => Some(Provenance::Estimated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    scale: usize,
    provenance: Provenance,
    values: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, scale: usize, provenance: Provenance, values: Vec<f64>) -> Result<Self> {
        check_odd(size)?;
        if values.len() != size * size {
            return Err(Error::sizing(format!(
                "kernel of side {size} needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        Ok(Self {
            size,
            scale,
            provenance,
            values,
        })
    }

    /// All mass on the center pixel.
    pub fn delta(size: usize, scale: usize) -> Result<Self> {
        check_odd(size)?;
        let mut values = vec![0.0; size * size];
        values[(size / 2) * size + size / 2] = 1.0;
        Self::new(size, scale, Provenance::Sampled, values)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.size + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn center(&self) -> usize {
        self.size / 2
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_scale(mut self, scale: usize) -> Self {
        self.scale = scale;
        self
    }

    pub fn transpose(&self) -> Self {
        let m = self.size;
        let mut values = vec![0.0; m * m];
        for y in 0..m {
            for x in 0..m {
                values[x * m + y] = self.values[y * m + x];
            }
        }
        Self { values, ..*self }
    }

    /// Divides by the sum. Fails on zero mass.
    pub fn normalized(&self) -> Result<Self> {
        let s = self.sum();
        if s == 0.0 || !s.is_finite() {
            return Err(Error::ZeroMass);
        }
        Ok(Self {
            values: self.values.iter().map(|v| v / s).collect(),
            ..*self
        })
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_odd(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::sizing(format!("kernel side must be odd and positive, got {size}")));
    }
    Ok(())
}

/// Anisotropic Gaussian parameters: orientation and covariance eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub theta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub const LAMBDA_MIN: f64 = 0.35;
pub const LAMBDA_MAX: f64 = 5.0;

impl GaussianSpec {
    pub fn new(theta: f64, lambda1: f64, lambda2: f64) -> Result<Self> {
        let spec = Self {
            theta,
            lambda1,
            lambda2,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Eigenvalues must be positive and finite; `theta` may be any finite angle.
    pub fn validate(&self) -> Result<()> {
        if !self.theta.is_finite() {
            return Err(Error::Config("theta must be finite".into()));
        }
        for l in [self.lambda1, self.lambda2] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!("eigenvalue {l} must be positive")));
            }
        }
        Ok(())
    }

    /// Covariance entries `(xx, yy, xy)` of `R(θ)·diag(λ1, λ2)·R(θ)ᵀ`.
    pub fn covariance(&self) -> (f64, f64, f64) {
        let theta = canonical_angle(self.theta);
        let mean = 0.5 * (self.lambda1 + self.lambda2);
        let half_diff = 0.5 * (self.lambda1 - self.lambda2);
        let (s2, c2) = (2.0 * theta).sin_cos();
        (mean + half_diff * c2, mean - half_diff * c2, half_diff * s2)
    }
}

/// Reduces an angle to `[0, π)` and snaps it to a 2⁻⁴⁰ grid, so that angles
/// differing by a multiple of π (up to rounding) give bit-identical kernels.
fn canonical_angle(theta: f64) -> f64 {
    const GRID: f64 = (1u64 << 40) as f64;
    let t = (theta.rem_euclid(std::f64::consts::PI) * GRID).round() / GRID;
    if t >= std::f64::consts::PI {
        0.0
    } else {
        t
    }
}

/// Evaluates the Gaussian density at integer offsets from the grid center and
/// normalizes to unit sum.
pub fn sample_gaussian_kernel(spec: &GaussianSpec, size: usize) -> Result<Kernel> {
    check_odd(size)?;
    spec.validate()?;
    let (sxx, syy, sxy) = spec.covariance();
    let det = sxx * syy - sxy * sxy;
    let r = (size / 2) as f64;
    let mut values = Vec::with_capacity(size * size);
    for y in 0..size {
        let dy = y as f64 - r;
        for x in 0..size {
            let dx = x as f64 - r;
            let q = ((syy * dx * dx + sxx * dy * dy) - 2.0 * sxy * dx * dy) / det;
            values.push((-0.5 * q).exp());
        }
    }
    let s: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= s);
    Kernel::new(size, scale_for_size(size), Provenance::Sampled, values)
}

fn scale_for_size(size: usize) -> usize {
    if size >= X4_KERNEL_SIZE {
        4
    } else {
        2
    }
}

/// Uniform distribution over anisotropic Gaussians: `θ ~ U[0, π]`,
/// `λ1, λ2 ~ U[lambda_min, lambda_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelDistribution {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub size: usize,
}

impl Default for KernelDistribution {
    fn default() -> Self {
        Self {
            lambda_min: LAMBDA_MIN,
            lambda_max: LAMBDA_MAX,
            size: X2_KERNEL_SIZE,
        }
    }
}

impl KernelDistribution {
    pub fn new(lambda_min: f64, lambda_max: f64, size: usize) -> Result<Self> {
        check_odd(size)?;
        if !(lambda_min > 0.0 && lambda_max >= lambda_min) {
            return Err(Error::Config(format!(
                "invalid eigenvalue range [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(Self {
            lambda_min,
            lambda_max,
            size,
        })
    }

    pub fn sample_spec(&self, rng: &mut rng::Rng) -> GaussianSpec {
        let theta = rng.random_range(0.0..=std::f64::consts::PI);
        let lambda1 = rng.random_range(self.lambda_min..=self.lambda_max);
        let lambda2 = rng.random_range(self.lambda_min..=self.lambda_max);
        GaussianSpec {
            theta,
            lambda1,
            lambda2,
        }
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> (GaussianSpec, Kernel) {
        let spec = self.sample_spec(rng);
        let k = sample_gaussian_kernel(&spec, self.size).expect("distribution validated on construction");
        (spec, k)
    }
}

/// Pre-normalization values of [`perturb_kernel_multiplicative`]: each pixel
/// moved by `U[-max_frac, max_frac] · max(k)` and clamped at zero.
pub fn perturbation_raw(k: &Kernel, max_frac: f64, rng_seed: u64) -> Vec<f64> {
    let mut rng = rng::seeded(rng_seed);
    let amp = max_frac * k.max_value();
    k.values
        .iter()
        .map(|&v| {
            let u: f64 = if max_frac > 0.0 {
                rng.random_range(-1.0..=1.0)
            } else {
                0.0
            };
            (v + u * amp).max(0.0)
        })
        .collect()
}

/// Adds bounded uniform noise proportional to the peak value, then renormalizes.
pub fn perturb_kernel_multiplicative(k: &Kernel, max_frac: f64, rng_seed: u64) -> Kernel {
    if max_frac == 0.0 {
        return k.clone().with_provenance(Provenance::Perturbed);
    }
    let raw = perturbation_raw(k, max_frac, rng_seed);
    let s: f64 = raw.iter().sum();
    if s <= 0.0 {
        // Everything clamped away; the unperturbed kernel is the only sane answer.
        return k.clone().with_provenance(Provenance::Perturbed);
    }
    Kernel {
        values: raw.into_iter().map(|v| v / s).collect(),
        provenance: Provenance::Perturbed,
        ..*k
    }
}

/// Full 2-D convolution of two square grids; output side is `a + b - 1`.
fn full_convolve(a: &[f64], na: usize, b: &[f64], nb: usize) -> (Vec<f64>, usize) {
    let n = na + nb - 1;
    let mut out = vec![0.0; n * n];
    for ay in 0..na {
        for ax in 0..na {
            let va = a[ay * na + ax];
            if va == 0.0 {
                continue;
            }
            for by in 0..nb {
                let row = &mut out[(ay + by) * n + ax..][..nb];
                for (o, &vb) in row.iter_mut().zip(&b[by * nb..(by + 1) * nb]) {
                    *o += va * vb;
                }
            }
        }
    }
    (out, n)
}

/// The x4 kernel equivalent to applying the x2 kernel twice with a x2
/// subsampling in between: `k2 ⊛ dilate₂(k2)`, center-cropped to 21×21.
pub fn derive_x4_kernel(k2: &Kernel) -> Result<Kernel> {
    if k2.size != X2_KERNEL_SIZE {
        return Err(Error::sizing(format!(
            "x4 derivation expects an {X2_KERNEL_SIZE}x{X2_KERNEL_SIZE} kernel, got {}",
            k2.size
        )));
    }
    let m = k2.size;
    let nd = 2 * m - 1;
    let mut dilated = vec![0.0; nd * nd];
    for y in 0..m {
        for x in 0..m {
            dilated[(2 * y) * nd + 2 * x] = k2.values[y * m + x];
        }
    }
    let (full, n) = full_convolve(&k2.values, m, &dilated, nd);
    let out_m = X4_KERNEL_SIZE;
    let off = (n - out_m) / 2;
    let mut values = Vec::with_capacity(out_m * out_m);
    for y in 0..out_m {
        values.extend_from_slice(&full[(y + off) * n + off..][..out_m]);
    }
    let s: f64 = values.iter().sum();
    if s == 0.0 {
        return Err(Error::ZeroMass);
    }
    values.iter_mut().for_each(|v| *v /= s);
    Kernel::new(out_m, 4, Provenance::DerivedX4, values)
}

/// Center of mass as `(dx, dy)` offsets from the grid center, mass-weighted by the
/// signed values of the normalized kernel.
pub fn center_of_mass(k: &Kernel) -> Result<(f64, f64)> {
    let s = k.sum();
    if s == 0.0 || !s.is_finite() {
        return Err(Error::ZeroMass);
    }
    let m = k.size;
    let r = (m / 2) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for y in 0..m {
        for x in 0..m {
            let v = k.values[y * m + x] / s;
            mx += v * (x as f64 - r);
            my += v * (y as f64 - r);
        }
    }
    Ok((mx, my))
}

/// Translates a row-major grid by `(-dx, -dy)` using linear interpolation of
/// mass, i.e. `out(y, x) = in(y + dy, x + dx)`. Mass leaving the grid is lost.
fn bilinear_translate(values: &[f64], m: usize, dx: f64, dy: f64) -> Vec<f64> {
    let shift_axis = |src: &[f64], d: f64, along_x: bool| -> Vec<f64> {
        let i0 = d.floor();
        let f = d - i0;
        let i0 = i0 as isize;
        let mut out = vec![0.0; m * m];
        let get = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= m as isize || x >= m as isize {
                0.0
            } else {
                src[y as usize * m + x as usize]
            }
        };
        for y in 0..m as isize {
            for x in 0..m as isize {
                let (a, b) = if along_x {
                    (get(y, x + i0), get(y, x + i0 + 1))
                } else {
                    (get(y + i0, x), get(y + i0 + 1, x))
                };
                out[y as usize * m + x as usize] = (1.0 - f) * a + f * b;
            }
        }
        out
    };
    let tmp = shift_axis(values, dx, true);
    shift_axis(&tmp, dy, false)
}

/// Moves the kernel so that its center of mass lies on the grid center.
///
/// Linear interpolation shifts the first moment exactly while mass stays on the
/// grid; a few refinement passes absorb the mass lost at the border.
pub fn shift_kernel_to_center(k: &Kernel) -> Result<Kernel> {
    let mut cur = k.normalized()?;
    for _ in 0..32 {
        let (dx, dy) = center_of_mass(&cur)?;
        if dx.abs() < 1e-12 && dy.abs() < 1e-12 {
            break;
        }
        let moved = bilinear_translate(&cur.values, cur.size, dx, dy);
        cur = Kernel {
            values: moved,
            ..cur
        }
        .normalized()?;
    }
    Ok(cur)
}

/// Discretized covariance of a kernel treated as a probability mass function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    /// Variance along the column axis.
    pub a: f64,
    /// Variance along the row axis.
    pub b: f64,
    /// Cross-covariance.
    pub c: f64,
}

impl CovarianceSummary {
    /// Eigenvalues, larger first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.a + self.b);
        let rad = (0.25 * (self.a - self.b).powi(2) + self.c * self.c).sqrt();
        (mean + rad, mean - rad)
    }

    /// Orientation in `[0, π)` of the eigenvector of the larger eigenvalue.
    pub fn principal_angle(&self) -> f64 {
        let t = 0.5 * (2.0 * self.c).atan2(self.a - self.b);
        t.rem_euclid(std::f64::consts::PI)
    }

    /// Entrywise L1 distance between the two 2×2 matrices; the off-diagonal
    /// entry appears twice.
    pub fn l1_distance(&self, other: &CovarianceSummary) -> f64 {
        (self.a - other.a).abs() + (self.b - other.b).abs() + 2.0 * (self.c - other.c).abs()
    }
}

pub fn discretized_covariance(k: &Kernel) -> Result<CovarianceSummary> {
    let total: f64 = k.values.iter().map(|v| v.abs()).sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::ZeroMass);
    }
    let m = k.size;
    let p: Vec<f64> = k.values.iter().map(|v| v.abs() / total).collect();
    let (mut mx, mut my) = (0.0, 0.0);
    for y in 0..m {
        for x in 0..m {
            let w = p[y * m + x];
            mx += w * x as f64;
            my += w * y as f64;
        }
    }
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for y in 0..m {
        for x in 0..m {
            let w = p[y * m + x];
            let (ex, ey) = (x as f64 - mx, y as f64 - my);
            a += w * ex * ex;
            b += w * ey * ey;
            c += w * ex * ey;
        }
    }
    Ok(CovarianceSummary { a, b, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Brute-force weighted moments, written independently of the module code.
    fn moments(values: &[f64], m: usize) -> (f64, f64, f64, f64, f64) {
        let total: f64 = values.iter().sum();
        let mut s = [0.0f64; 5];
        for (i, v) in values.iter().enumerate() {
            let (y, x) = ((i / m) as f64, (i % m) as f64);
            s[0] += v * x;
            s[1] += v * y;
        }
        let (mx, my) = (s[0] / total, s[1] / total);
        for (i, v) in values.iter().enumerate() {
            let (y, x) = ((i / m) as f64, (i % m) as f64);
            s[2] += v * (x - mx) * (x - mx);
            s[3] += v * (y - my) * (y - my);
            s[4] += v * (x - mx) * (y - my);
        }
        (mx, my, s[2] / total, s[3] / total, s[4] / total)
    }

    #[test]
    fn rejects_even_size() {
        let spec = GaussianSpec::new(0.0, 1.0, 1.0).unwrap();
        assert!(matches!(sample_gaussian_kernel(&spec, 10), Err(Error::Sizing(_))));
    }

    #[test]
    fn isotropic_kernel_ignores_theta_and_is_transpose_symmetric() {
        let a = sample_gaussian_kernel(&GaussianSpec::new(0.7, 1.0, 1.0).unwrap(), 11).unwrap();
        for theta in [0.0, 0.3, 1.1, 2.9, PI] {
            let b = sample_gaussian_kernel(&GaussianSpec::new(theta, 1.0, 1.0).unwrap(), 11).unwrap();
            assert_eq!(a.values(), b.values());
        }
        let t = a.transpose();
        let diff = a.values().iter().zip(t.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9);
    }

    #[test]
    fn half_turn_gives_identical_kernel() {
        for &(theta, l1, l2) in &[(0.7, 3.0, 0.5), (2.1, 0.4, 4.9), (0.0, 1.0, 2.0)] {
            let a = sample_gaussian_kernel(&GaussianSpec::new(theta, l1, l2).unwrap(), 11).unwrap();
            let b = sample_gaussian_kernel(&GaussianSpec::new(theta + PI, l1, l2).unwrap(), 11).unwrap();
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn axis_aligned_covariance_on_wide_grid() {
        let k = sample_gaussian_kernel(&GaussianSpec::new(0.0, 2.0, 0.5).unwrap(), 41).unwrap();
        let (_, _, vx, vy, cxy) = moments(k.values(), 41);
        assert!((vx - 2.0).abs() / 2.0 < 0.05, "{vx}");
        assert!((vy - 0.5).abs() / 0.5 < 0.05, "{vy}");
        assert!(cxy.abs() < 1e-9);
        let cov = discretized_covariance(&k).unwrap();
        assert!((cov.a - vx).abs() < 1e-12 && (cov.b - vy).abs() < 1e-12);
    }

    #[test]
    fn isotropic_lambda4_covariance_on_21_grid() {
        let k = sample_gaussian_kernel(&GaussianSpec::new(0.4, 4.0, 4.0).unwrap(), 21).unwrap();
        let (_, _, vx, vy, cxy) = moments(k.values(), 21);
        let cov = discretized_covariance(&k).unwrap();
        assert!((cov.a - vx).abs() < 1e-12 && (cov.b - vy).abs() < 1e-12);
        assert!((cov.a - 4.0).abs() < 0.05 && (cov.b - 4.0).abs() < 0.05);
        assert!(cov.c.abs() < 0.05 && cxy.abs() < 0.05);
    }

    #[test]
    fn covariance_of_delta_is_zero_and_transpose_swaps_axes() {
        let d = Kernel::delta(11, 2).unwrap();
        let c = discretized_covariance(&d).unwrap();
        assert_eq!((c.a, c.b, c.c), (0.0, 0.0, 0.0));

        let k = sample_gaussian_kernel(&GaussianSpec::new(0.5, 3.0, 0.6).unwrap(), 11).unwrap();
        let c1 = discretized_covariance(&k).unwrap();
        let c2 = discretized_covariance(&k.transpose()).unwrap();
        assert!((c1.a - c2.b).abs() < 1e-12 && (c1.b - c2.a).abs() < 1e-12);
        assert!((c1.c - c2.c).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_is_an_error() {
        let z = Kernel::new(5, 2, Provenance::Estimated, vec![0.0; 25]).unwrap();
        assert!(matches!(discretized_covariance(&z), Err(Error::ZeroMass)));
        assert!(matches!(shift_kernel_to_center(&z), Err(Error::ZeroMass)));
    }

    #[test]
    fn perturb_zero_noise_is_identity() {
        let k = sample_gaussian_kernel(&GaussianSpec::new(0.3, 2.0, 1.0).unwrap(), 11).unwrap();
        let p = perturb_kernel_multiplicative(&k, 0.0, 5);
        assert_eq!(p.values(), k.values());
        assert_eq!(p.provenance(), Provenance::Perturbed);
    }

    #[test]
    fn perturbed_delta_off_center_bounded_by_frac() {
        let d = Kernel::delta(11, 2).unwrap();
        for seed in 0..20 {
            let raw = perturbation_raw(&d, 0.4, seed);
            for (i, v) in raw.iter().enumerate() {
                if i != 60 {
                    assert!((0.0..=0.4).contains(v), "pixel {i} = {v}");
                }
            }
            let p = perturb_kernel_multiplicative(&d, 0.4, seed);
            assert!((p.sum() - 1.0).abs() < 1e-6);
            assert!(p.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn x4_of_delta_is_delta() {
        let d = Kernel::delta(11, 2).unwrap();
        let k4 = derive_x4_kernel(&d).unwrap();
        assert_eq!(k4.size(), 21);
        assert_eq!(k4.scale(), 4);
        assert_eq!(k4.provenance(), Provenance::DerivedX4);
        assert_eq!(k4.at(10, 10), 1.0);
        assert_eq!(k4.sum(), 1.0);
    }

    #[test]
    fn x4_rejects_wrong_size() {
        let d = Kernel::delta(21, 4).unwrap();
        assert!(matches!(derive_x4_kernel(&d), Err(Error::Sizing(_))));
    }

    #[test]
    fn x4_variance_is_five_times_x2() {
        // Oracle: moments of the explicit dilate-and-convolve on an untruncated grid.
        for lambda in [0.5, 1.0, 1.5] {
            let k2 = sample_gaussian_kernel(&GaussianSpec::new(0.0, lambda, lambda).unwrap(), 11).unwrap();
            let (_, _, v2, _, _) = moments(k2.values(), 11);
            let k4 = derive_x4_kernel(&k2).unwrap();
            let (_, _, v4x, v4y, _) = moments(k4.values(), 21);
            assert!((v4x / v2 - 5.0).abs() / 5.0 < 0.10, "lambda {lambda}: {}", v4x / v2);
            assert!((v4y / v2 - 5.0).abs() / 5.0 < 0.10);
            assert!((k4.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_gaussian_unchanged_by_shift() {
        let k = sample_gaussian_kernel(&GaussianSpec::new(0.9, 2.5, 0.8).unwrap(), 11).unwrap();
        let s = shift_kernel_to_center(&k).unwrap();
        for (a, b) in k.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn integer_offset_delta_moves_to_center() {
        let mut v = vec![0.0; 121];
        v[5 * 11 + 7] = 1.0; // (x=7, y=5): +2 columns from center
        let k = Kernel::new(11, 2, Provenance::Estimated, v).unwrap();
        let s = shift_kernel_to_center(&k).unwrap();
        assert!((s.at(5, 5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fractional_offset_is_removed() {
        // Build a kernel with center of mass at (+0.5, -0.25).
        let base = sample_gaussian_kernel(&GaussianSpec::new(0.2, 1.2, 0.7).unwrap(), 11).unwrap();
        let moved = bilinear_translate(base.values(), 11, -0.5, 0.25);
        let k = Kernel::new(11, 2, Provenance::Estimated, moved).unwrap().normalized().unwrap();
        let (mx, my, _, _, _) = moments(k.values(), 11);
        assert!((mx - 5.5).abs() < 1e-3 && (my - 4.75).abs() < 1e-3, "{mx} {my}");
        let s = shift_kernel_to_center(&k).unwrap();
        let (mx, my, _, _, _) = moments(s.values(), 11);
        assert!((mx - 5.0).abs() < 1e-3 && (my - 5.0).abs() < 1e-3);
        assert!((s.sum() - 1.0).abs() < 1e-12);
    }
}
