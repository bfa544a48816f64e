//! PNG input/output for images stored as `[0,1]` floats.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor};

fn image_err(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads an 8- or 16-bit PNG (or any format the `image` crate decodes with
/// the enabled features). Grayscale stays single-channel, everything else
/// becomes RGB; alpha is dropped.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(from_dynamic(img))
}

pub fn from_dynamic(img: DynamicImage) -> Image {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let gray = !img.color().has_color();
    let channels = if gray { 1 } else { 3 };
    let mut t = Tensor::zeros(channels, h, w);
    let plane = h * w;
    match (gray, sixteen) {
        (true, false) => {
            for (i, p) in img.to_luma8().pixels().enumerate() {
                t.data[i] = p.0[0] as f64 / 255.0;
            }
        }
        (true, true) => {
            for (i, p) in img.to_luma16().pixels().enumerate() {
                t.data[i] = p.0[0] as f64 / 65535.0;
            }
        }
        (false, false) => {
            for (i, p) in img.to_rgb8().pixels().enumerate() {
                for c in 0..3 {
                    t.data[c * plane + i] = p.0[c] as f64 / 255.0;
                }
            }
        }
        (false, true) => {
            for (i, p) in img.to_rgb16().pixels().enumerate() {
                for c in 0..3 {
                    t.data[c * plane + i] = p.0[c] as f64 / 65535.0;
                }
            }
        }
    }
    Image::new(t)
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantizes to 8 bits per channel (round half away from zero, clamped).
pub fn to_dynamic(img: &Image) -> Result<DynamicImage> {
    let (h, w) = (img.height(), img.width());
    let t = img.tensor();
    let plane = h * w;
    match img.channels() {
        1 => {
            let buf = ImageBuffer::<Luma<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
                Luma([quantize8(t.data[y as usize * w + x as usize])])
            });
            Ok(DynamicImage::ImageLuma8(buf))
        }
        3 => {
            let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
                let i = y as usize * w + x as usize;
                Rgb([
                    quantize8(t.data[i]),
                    quantize8(t.data[plane + i]),
                    quantize8(t.data[2 * plane + i]),
                ])
            });
            Ok(DynamicImage::ImageRgb8(buf))
        }
        c => Err(Error::sizing(format!("cannot encode a {c}-channel image"))),
    }
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let dynimg = to_dynamic(img)?;
    let mut out = std::io::Cursor::new(Vec::new());
    dynimg
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Config(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes = encode_png(img).map_err(|e| image_err(path, e))?;
    super::archive::write_atomic(path, &bytes)
}

/// Image files in a directory with a recognized extension, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        let ok = p
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.eq_ignore_ascii_case("png"))
            .unwrap_or(false);
        if ok && p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
