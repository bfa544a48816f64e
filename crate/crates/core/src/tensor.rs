//! Dense planar arrays used for feature maps and images.

use crate::error::{Error, Result};

/// A `channels × height × width` array of `f64`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::sizing(format!(
                "buffer of {} values does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn scale_inplace(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Copies the `h × w` window with top-left corner `(y0, x0)` from every channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::sizing(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                let src = &self.plane(c)[(y0 + y) * self.width + x0..][..w];
                out.plane_mut(c)[y * w..(y + 1) * w].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Weights for full-range ITU-R BT.601 luma.
pub const BT601_LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// An image with values in `[0, 1]`, one plane per channel (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq)]
pub struct Image(pub Tensor);

impl Image {
    pub fn new(tensor: Tensor) -> Self {
        Image(tensor)
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image(Tensor::zeros(channels, height, width))
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        let mut t = Tensor::zeros(channels, height, width);
        t.data.fill(value);
        Image(t)
    }

    pub fn channels(&self) -> usize {
        self.0.channels
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Single-channel luma. Gray images are returned unchanged.
    pub fn luminance(&self) -> Tensor {
        let t = &self.0;
        match t.channels {
            1 => t.clone(),
            3 => {
                let n = t.plane_len();
                let mut out = Tensor::zeros(1, t.height, t.width);
                for (i, o) in out.data.iter_mut().enumerate() {
                    *o = BT601_LUMA[0] * t.data[i]
                        + BT601_LUMA[1] * t.data[n + i]
                        + BT601_LUMA[2] * t.data[2 * n + i];
                }
                out
            }
            c => {
                // Plain average for unusual channel counts.
                let n = t.plane_len();
                let mut out = Tensor::zeros(1, t.height, t.width);
                for ch in 0..c {
                    for i in 0..n {
                        out.data[i] += t.data[ch * n + i] / c as f64;
                    }
                }
                out
            }
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        self.0.crop(y0, x0, h, w).map(Image)
    }

    /// Rotates by 90° counter-clockwise `times` times.
    pub fn rot90(&self, times: u8) -> Self {
        let mut img = self.clone();
        for _ in 0..(times % 4) {
            let t = &img.0;
            let (h, w) = (t.height, t.width);
            let mut out = Tensor::zeros(t.channels, w, h);
            for c in 0..t.channels {
                for y in 0..h {
                    for x in 0..w {
                        // (y, x) -> (w - 1 - x, y)
                        *out.at_mut(c, w - 1 - x, y) = t.at(c, y, x);
                    }
                }
            }
            img = Image(out);
        }
        img
    }

    pub fn flip_horizontal(&self) -> Self {
        let t = &self.0;
        let mut out = t.clone();
        for c in 0..t.channels {
            for y in 0..t.height {
                for x in 0..t.width {
                    *out.at_mut(c, y, x) = t.at(c, y, t.width - 1 - x);
                }
            }
        }
        Image(out)
    }

    pub fn flip_vertical(&self) -> Self {
        let t = &self.0;
        let mut out = t.clone();
        for c in 0..t.channels {
            for y in 0..t.height {
                for x in 0..t.width {
                    *out.at_mut(c, y, x) = t.at(c, t.height - 1 - y, x);
                }
            }
        }
        Image(out)
    }
}

/// Reflects an out-of-range index back into `[0, n)` without repeating the edge
/// sample (`d c b | a b c d | c b a`). Handles offsets larger than `n`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let mut t = Tensor::zeros(2, 3, 5);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let img = Image(t);
        assert_eq!(img.rot90(4), img);
        let r = img.rot90(1);
        assert_eq!((r.height(), r.width()), (5, 3));
        assert_eq!(r.rot90(3), img);
    }

    #[test]
    fn luminance_of_gray_rgb_is_gray() {
        let img = Image::filled(3, 4, 4, 0.25);
        let y = img.luminance();
        assert!(y.data.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }
}
