//! RGB rasters, Shades-of-Gray color constancy and affine warping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AffineMap;

pub type Rgb = [u8; 3];

/// Owned 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-area image ({width}x{height})"
            )));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} image needs {expected} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    /// Image filled with a single color.
    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self> {
        Self::new(width, height, vec![color; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, color: Rgb) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = color;
    }
}

/// Parameters of the Minkowski-norm illuminant estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorConstancyConfig {
    /// Norm order; 1 is gray-world, larger values weight bright pixels more.
    pub p: f64,
    /// Floor for a normalized channel estimate before it is inverted.
    pub epsilon: f64,
}

impl Default for ColorConstancyConfig {
    fn default() -> Self {
        ColorConstancyConfig {
            p: 6.0,
            epsilon: 1e-6,
        }
    }
}

impl ColorConstancyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "color constancy norm order p must be >= 1, got {}",
                self.p
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "color constancy epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-channel illuminant estimate `(mean((I/255)^p))^(1/p)`.
///
/// Built from per-channel value histograms, so the reduction order is fixed
/// and the result does not depend on how the caller schedules work.
pub fn illuminant_estimate(img: &Image, p: f64) -> [f64; 3] {
    let mut hist = [[0u64; 256]; 3];
    for px in img.pixels() {
        hist[0][px[0] as usize] += 1;
        hist[1][px[1] as usize] += 1;
        hist[2][px[2] as usize] += 1;
    }
    let powers: Vec<f64> = (0..256).map(|v| (v as f64 / 255.0).powf(p)).collect();
    let n = img.pixels().len() as f64;
    let mut estimate = [0.0; 3];
    for (c, channel) in hist.iter().enumerate() {
        let sum: f64 = channel
            .iter()
            .zip(&powers)
            .map(|(&count, &pw)| count as f64 * pw)
            .sum();
        estimate[c] = (sum / n).powf(1.0 / p);
    }
    estimate
}

/// Gains that map the estimated illuminant onto the neutral axis.
///
/// A neutral estimate yields gains of exactly 1. A black image has no
/// illuminant to correct and also yields unit gains.
pub fn channel_gains(img: &Image, cfg: &ColorConstancyConfig) -> Result<[f64; 3]> {
    cfg.validate()?;
    let e = illuminant_estimate(img, cfg.p);
    Ok(gains_from_estimate(e, cfg.epsilon))
}

pub(crate) fn gains_from_estimate(e: [f64; 3], epsilon: f64) -> [f64; 3] {
    let norm = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    if !(norm > 0.0) {
        return [1.0; 3];
    }
    let sqrt3 = 3f64.sqrt();
    e.map(|ec| 1.0 / (sqrt3 * (ec / norm).max(epsilon)))
}

/// Shades-of-Gray color constancy.
pub fn shades_of_gray(img: &Image, cfg: &ColorConstancyConfig) -> Result<Image> {
    let gains = channel_gains(img, cfg)?;
    Ok(apply_gains(img, gains))
}

/// Multiplies every channel by its gain, clamps to `[0, 255]` and rounds half up.
pub fn apply_gains(img: &Image, gains: [f64; 3]) -> Image {
    let mut lut = [[0u8; 256]; 3];
    for (c, table) in lut.iter_mut().enumerate() {
        for (v, out) in table.iter_mut().enumerate() {
            *out = round_u8(v as f64 * gains[c]);
        }
    }
    let pixels = img
        .pixels()
        .iter()
        .map(|px| {
            [
                lut[0][px[0] as usize],
                lut[1][px[1] as usize],
                lut[2][px[2] as usize],
            ]
        })
        .collect();
    Image {
        width: img.width,
        height: img.height,
        pixels,
    }
}

#[inline]
fn round_u8(v: f64) -> u8 {
    (v.clamp(0.0, 255.0) + 0.5).floor().min(255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Warps with bilinear sampling.
pub fn warp_image(img: &Image, m: &AffineMap, fill: Rgb) -> Result<Image> {
    warp_image_with(img, m, fill, Interpolation::Bilinear)
}

/// Resamples `img` under `m` onto a canvas of the same size.
///
/// Each output pixel center is pulled back through the inverse map; samples
/// landing outside the source canvas take `fill`.
pub fn warp_image_with(
    img: &Image,
    m: &AffineMap,
    fill: Rgb,
    interpolation: Interpolation,
) -> Result<Image> {
    let inv = m.inverse()?;
    let (w, h) = (img.width as f64, img.height as f64);
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for j in 0..img.height {
        let qy = j as f64 + 0.5;
        for i in 0..img.width {
            let qx = i as f64 + 0.5;
            let (px, py) = inv.apply(qx, qy);
            let color = if !(px >= 0.0 && px <= w && py >= 0.0 && py <= h) {
                fill
            } else {
                match interpolation {
                    Interpolation::Bilinear => sample_bilinear(img, px, py),
                    Interpolation::Nearest => sample_nearest(img, px, py),
                }
            };
            pixels.push(color);
        }
    }
    Ok(Image {
        width: img.width,
        height: img.height,
        pixels,
    })
}

fn sample_nearest(img: &Image, px: f64, py: f64) -> Rgb {
    let x = (px.floor() as i64).clamp(0, img.width as i64 - 1) as u32;
    let y = (py.floor() as i64).clamp(0, img.height as i64 - 1) as u32;
    img.get(x, y)
}

fn sample_bilinear(img: &Image, px: f64, py: f64) -> Rgb {
    let u = px - 0.5;
    let v = py - 0.5;
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let max_x = img.width as i64 - 1;
    let max_y = img.height as i64 - 1;
    let xa = (x0 as i64).clamp(0, max_x) as u32;
    let xb = (x0 as i64 + 1).clamp(0, max_x) as u32;
    let ya = (y0 as i64).clamp(0, max_y) as u32;
    let yb = (y0 as i64 + 1).clamp(0, max_y) as u32;
    let (p00, p10, p01, p11) = (
        img.get(xa, ya),
        img.get(xb, ya),
        img.get(xa, yb),
        img.get(xb, yb),
    );
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = round_u8(top * (1.0 - fy) + bottom * fy);
    }
    out
}
