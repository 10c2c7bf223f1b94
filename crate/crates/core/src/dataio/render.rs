//! Box overlays with score labels drawn in a built-in 5x7 digit font.

use std::path::Path;

use crate::error::Result;
use crate::geometry::{clip_box, BBox};
use crate::imageops::{Image, Rgb};
use crate::refine::Detection;

use super::save_png;

pub const GT_COLOR: Rgb = [0, 255, 0];
pub const DET_COLOR: Rgb = [255, 0, 0];
pub const LABEL_TEXT_COLOR: Rgb = [255, 255, 255];

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;

/// Rows top to bottom; bit 4 is the leftmost column.
fn glyph(ch: char) -> Option<[u8; 7]> {
    Some(match ch {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        _ => return None,
    })
}

/// Score text drawn next to a detection.
pub fn score_label(score: f64) -> String {
    format!("{score:.2}")
}

/// Line thickness and glyph scale for a canvas.
fn stroke_scale(img: &Image) -> u32 {
    1 + img.width().min(img.height()) / 400
}

struct Canvas<'a> {
    img: &'a mut Image,
}

impl Canvas<'_> {
    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb) {
        let x0 = x0.max(0);
        let y0 = y0.max(0);
        let x1 = x1.min(self.img.width() as i64);
        let y1 = y1.min(self.img.height() as i64);
        for y in y0..y1 {
            for x in x0..x1 {
                self.img.put(x as u32, y as u32, color);
            }
        }
    }

    /// Outline drawn inward from the pixel hull of `b`.
    fn outline(&mut self, b: &BBox, t: u32, color: Rgb) {
        let Some(c) = clip_box(b, self.img.width() as f64, self.img.height() as f64) else {
            return;
        };
        let x0 = c.x.floor() as i64;
        let y0 = c.y.floor() as i64;
        let x1 = c.right().ceil() as i64;
        let y1 = c.bottom().ceil() as i64;
        let t = t as i64;
        self.fill_rect(x0, y0, x1, y0 + t, color);
        self.fill_rect(x0, y1 - t, x1, y1, color);
        self.fill_rect(x0, y0, x0 + t, y1, color);
        self.fill_rect(x1 - t, y0, x1, y1, color);
    }

    fn text(&mut self, x: i64, y: i64, text: &str, scale: u32, color: Rgb) {
        let s = scale as i64;
        for (k, ch) in text.chars().enumerate() {
            let Some(rows) = glyph(ch) else { continue };
            let gx = x + k as i64 * (GLYPH_W as i64 + 1) * s;
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..GLYPH_W as i64 {
                    if bits & (0x10 >> col) != 0 {
                        let px = gx + col * s;
                        let py = y + r as i64 * s;
                        self.fill_rect(px, py, px + s, py + s, color);
                    }
                }
            }
        }
    }
}

/// Size of the label plate for `text` at `scale`.
pub(crate) fn label_size(text: &str, scale: u32) -> (u32, u32) {
    let n = text.chars().count() as u32;
    ((n * (GLYPH_W + 1) + 1) * scale, (GLYPH_H + 2) * scale)
}

/// Top-left corner of the label plate: just above the box when it fits,
/// otherwise tucked inside its top edge.
pub(crate) fn label_origin(b: &BBox, plate_h: u32) -> (i64, i64) {
    let x = b.x.max(0.0).floor() as i64;
    let top = b.y.max(0.0).floor() as i64;
    let y = if top >= plate_h as i64 {
        top - plate_h as i64
    } else {
        top
    };
    (x, y)
}

/// Draws ground truths, then detections, then score labels.
pub fn draw_overlay(img: &Image, gts: &[BBox], dets: &[Detection]) -> Image {
    let mut out = img.clone();
    let scale = stroke_scale(img);
    let mut canvas = Canvas { img: &mut out };
    for b in gts {
        canvas.outline(b, scale, GT_COLOR);
    }
    for d in dets {
        canvas.outline(&d.bbox, scale, DET_COLOR);
    }
    for d in dets {
        let text = score_label(d.score);
        let (pw, ph) = label_size(&text, scale);
        let (x, y) = label_origin(&d.bbox, ph);
        canvas.fill_rect(x, y, x + pw as i64, y + ph as i64, DET_COLOR);
        canvas.text(
            x + scale as i64,
            y + scale as i64,
            &text,
            scale,
            LABEL_TEXT_COLOR,
        );
    }
    out
}

/// Draws the overlay and writes it as PNG.
pub fn render_overlay(
    img: &Image,
    gts: &[BBox],
    dets: &[Detection],
    path: impl AsRef<Path>,
) -> Result<()> {
    save_png(&draw_overlay(img, gts, dets), path)
}
