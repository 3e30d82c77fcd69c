//! PNG rendering of decoded prototypes.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};

const MARK: [u8; 3] = [255, 0, 0];
/// Gap between montage tiles, in pixels.
const GAP: usize = 2;

/// An 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Raster {
    /// From a decoded `[C][H][W]` image with values in [0, 1]. One channel is
    /// replicated to gray, three are taken as RGB, otherwise the channel mean
    /// is shown.
    pub fn from_chw(image: &[f32], shape: (usize, usize, usize)) -> Raster {
        let (c, h, w) = shape;
        assert_eq!(image.len(), c * h * w, "image size");
        let plane = h * w;
        let mut rgb = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            if c == 3 {
                rgb.extend((0..3).map(|ch| to_byte(image[ch * plane + p])));
            } else {
                let mean = (0..c).map(|ch| image[ch * plane + p]).sum::<f32>() / c as f32;
                rgb.extend([to_byte(mean); 3]);
            }
        }
        Raster {
            width: w,
            height: h,
            rgb,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.rgb[i..i + 3].copy_from_slice(&color);
    }

    /// Draws both diagonals in red, about one twelfth of the size thick.
    pub fn mark_with_cross(&mut self) {
        let (w, h) = (self.width as f64, self.height as f64);
        let half = (w.min(h) / 24.0).max(0.5);
        for y in 0..self.height {
            for x in 0..self.width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                // distances to the two diagonals
                let norm = (w * w + h * h).sqrt();
                let d1 = (h * px - w * py).abs() / norm;
                let d2 = (h * px + w * py - w * h).abs() / norm;
                if d1 <= half || d2 <= half {
                    self.set(x, y, MARK);
                }
            }
        }
    }

    /// Tiles left to right on a white background.
    pub fn montage(tiles: &[Raster]) -> Raster {
        let h = tiles.iter().map(|t| t.height).max().unwrap_or(0);
        let w = tiles.iter().map(|t| t.width).sum::<usize>() + GAP * tiles.len().saturating_sub(1);
        let mut out = Raster {
            width: w,
            height: h,
            rgb: vec![255; 3 * w * h],
        };
        let mut x0 = 0;
        for t in tiles {
            for y in 0..t.height {
                for x in 0..t.width {
                    out.set(x0 + x, y, t.pixel(x, y));
                }
            }
            x0 += t.width + GAP;
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut enc =
            png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .with_context(|| format!("writing {}", path.display()))?;
        writer
            .write_image_data(&self.rgb)
            .with_context(|| format!("writing {}", path.display()))?;
        writer
            .finish()
            .with_context(|| format!("writing {}", path.display()))
    }
}
