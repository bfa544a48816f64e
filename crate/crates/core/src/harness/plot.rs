//! Kernel montages: one heatmap cell per kernel, one shared color scale,
//! optional step labels drawn with a tiny built-in digit font.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptationTrace;
use crate::error::{Error, Result};
use crate::io::archive::{load_kernel, write_atomic};
use crate::io::png::encode_png;
use crate::tensor::{Image, Tensor};

/// 3×5 glyphs for `0`–`9`, one row per `u8`, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

// Piecewise-linear dark-to-bright ramp (black, purple, orange, pale yellow).
const RAMP: [[f64; 3]; 4] = [[0.0, 0.0, 0.02], [0.45, 0.08, 0.45], [0.95, 0.45, 0.1], [1.0, 1.0, 0.75]];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotStyle {
    /// Screen pixels per kernel tap.
    pub zoom: usize,
    pub gap: usize,
    /// Glyph pixel size of the step labels.
    pub font_scale: usize,
    pub columns: usize,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            zoom: 12,
            gap: 4,
            font_scale: 2,
            columns: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotCell {
    pub size: usize,
    pub values: Vec<f64>,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MontageMeta {
    pub cells: usize,
    pub rows: usize,
    pub columns: usize,
    pub vmin: f64,
    pub vmax: f64,
    pub steps: Vec<Option<usize>>,
}

fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mut c = [0.0; 3];
    for ch in 0..3 {
        c[ch] = RAMP[i][ch] * (1.0 - f) + RAMP[i + 1][ch] * f;
    }
    c
}

fn put(t: &mut Tensor, y: usize, x: usize, rgb: [f64; 3]) {
    for (ch, v) in rgb.iter().enumerate() {
        *t.at_mut(ch, y, x) = *v;
    }
}

fn draw_number(t: &mut Tensor, n: usize, y0: usize, x0: usize, scale: usize) {
    for (i, ch) in n.to_string().bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let gx = x0 + i * 4 * scale;
        for (gy, bits) in glyph.iter().enumerate() {
            for bx in 0..3 {
                if bits & (0b100 >> bx) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (y, x) = (y0 + gy * scale + dy, gx + bx * scale + dx);
                        if y < t.height && x < t.width {
                            put(t, y, x, [1.0; 3]);
                        }
                    }
                }
            }
        }
    }
}

/// Renders the montage and its metadata.
pub fn render_montage(cells: &[PlotCell], style: &PlotStyle) -> Result<(Image, MontageMeta)> {
    if cells.is_empty() {
        return Err(Error::Empty("no kernels to plot".into()));
    }
    if style.zoom == 0 || style.columns == 0 {
        return Err(Error::Config("zoom and columns must be positive".into()));
    }
    let size = cells.iter().map(|c| c.size).max().unwrap_or(0);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in cells {
        if c.values.len() != c.size * c.size {
            return Err(Error::sizing("kernel value count does not match its size"));
        }
        for &v in c.values.iter().filter(|v| v.is_finite()) {
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    if !vmin.is_finite() {
        (vmin, vmax) = (0.0, 1.0);
    }
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };

    let columns = style.columns.min(cells.len());
    let rows = cells.len().div_ceil(columns);
    let labelled = cells.iter().any(|c| c.step.is_some());
    let label_h = if labelled { 7 * style.font_scale } else { 0 };
    let cell_w = size * style.zoom;
    let cell_h = cell_w + label_h;
    let width = columns * cell_w + (columns + 1) * style.gap;
    let height = rows * cell_h + (rows + 1) * style.gap;
    let mut t = Tensor::zeros(3, height, width);
    for (i, c) in cells.iter().enumerate() {
        let y0 = style.gap + (i / columns) * (cell_h + style.gap);
        let x0 = style.gap + (i % columns) * (cell_w + style.gap);
        // Smaller kernels are centered inside the cell.
        let off = (size - c.size) / 2 * style.zoom;
        for ky in 0..c.size {
            for kx in 0..c.size {
                let v = c.values[ky * c.size + kx];
                let rgb = if v.is_finite() { colormap((v - vmin) / span) } else { [1.0, 0.0, 0.0] };
                for dy in 0..style.zoom {
                    for dx in 0..style.zoom {
                        put(&mut t, y0 + off + ky * style.zoom + dy, x0 + off + kx * style.zoom + dx, rgb);
                    }
                }
            }
        }
        if let Some(step) = c.step {
            draw_number(&mut t, step, y0 + cell_w + style.font_scale, x0, style.font_scale);
        }
    }
    let meta = MontageMeta {
        cells: cells.len(),
        rows,
        columns,
        vmin,
        vmax,
        steps: cells.iter().map(|c| c.step).collect(),
    };
    Ok((Image::new(t), meta))
}

pub fn cells_from_files(paths: &[PathBuf]) -> Result<Vec<PlotCell>> {
    paths
        .iter()
        .map(|p| {
            let k = load_kernel(p)?;
            Ok(PlotCell {
                size: k.size(),
                values: k.values().to_vec(),
                step: None,
            })
        })
        .collect()
}

pub fn cells_from_trace(trace: &AdaptationTrace) -> Result<Vec<PlotCell>> {
    trace
        .entries
        .iter()
        .map(|e| {
            let size = (e.kernel.len() as f64).sqrt().round() as usize;
            if size * size != e.kernel.len() {
                return Err(Error::sizing(format!("trace entry at step {} is not square", e.step)));
            }
            Ok(PlotCell {
                size,
                values: e.kernel.clone(),
                step: Some(e.step),
            })
        })
        .collect()
}

pub fn sidecar_path(out_image: &Path) -> PathBuf {
    out_image.with_extension("json")
}

/// Writes the PNG plus a JSON sidecar with the montage metadata.
pub fn plot_kernels(cells: &[PlotCell], style: &PlotStyle, out_image: &Path) -> Result<MontageMeta> {
    let (img, meta) = render_montage(cells, style)?;
    write_atomic(out_image, &encode_png(&img)?)?;
    write_atomic(&sidecar_path(out_image), &serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn montage_shape_and_labels() {
        let cells: Vec<PlotCell> = (0..5)
            .map(|i| PlotCell {
                size: 3,
                values: vec![i as f64; 9],
                step: Some(25 * (i + 1)),
            })
            .collect();
        let style = PlotStyle::default();
        let (img, meta) = render_montage(&cells, &style).unwrap();
        assert_eq!((meta.cells, meta.rows, meta.columns), (5, 2, 4));
        assert_eq!(img.width(), 4 * 36 + 5 * 4);
        assert_eq!(img.height(), 2 * (36 + 14) + 3 * 4);
        assert_eq!((meta.vmin, meta.vmax), (0.0, 4.0));
    }
}
