//! Joint image and box augmentation with random rotation and shear.
//!
//! Every sample records the parameters it was drawn with, so each output box
//! can be re-derived from its source box with [`Provenance::transform`],
//! [`transform_box`] and [`clip_box`].

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, Annotation, AnnotationSet, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{clip_box, transform_box, AffineMap, BBox};
use crate::imageops::{warp_image, Image, Rgb};

/// Redraws allowed per copy after the first draw loses every box.
pub const MAX_REDRAWS: usize = 5;

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub const fn point(v: f64) -> Self {
        Range { min: v, max: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_range_deg: Range,
    /// Applied independently to the x and y shear factors.
    pub shear_range: Range,
    pub copies_per_image: usize,
    /// Boxes whose clipped area falls below this are dropped.
    pub min_box_area_px: f64,
    pub seed: u64,
    pub fill: Rgb,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_range_deg: Range::new(-25.0, 25.0),
            shear_range: Range::new(-0.2, 0.2),
            copies_per_image: 2,
            min_box_area_px: 16.0,
            seed: 0,
            fill: [0, 0, 0],
        }
    }
}

impl AugmentConfig {
    /// Every parameter pinned at zero: the output reproduces the input.
    pub fn identity(copies_per_image: usize, seed: u64) -> Self {
        AugmentConfig {
            rotation_range_deg: Range::point(0.0),
            shear_range: Range::point(0.0),
            copies_per_image,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("rotation", self.rotation_range_deg),
            ("shear", self.shear_range),
        ] {
            if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
                return Err(Error::InvalidConfig(format!(
                    "{name} range [{}, {}] is not a valid interval",
                    r.min, r.max
                )));
            }
        }
        if self.copies_per_image == 0 {
            return Err(Error::InvalidConfig(
                "copies_per_image must be at least 1".into(),
            ));
        }
        if !(self.min_box_area_px >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "min_box_area_px must be non-negative, got {}",
                self.min_box_area_px
            )));
        }
        Ok(())
    }
}

/// Rotation followed by shear, both about the canvas center.
pub fn build_transform(
    angle_deg: f64,
    shear_x: f64,
    shear_y: f64,
    width: u32,
    height: u32,
) -> Result<AffineMap> {
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let m = AffineMap::translation(cx, cy)
        .after(&AffineMap::shear(shear_x, shear_y))
        .after(&AffineMap::rotation(angle_deg))
        .after(&AffineMap::translation(-cx, -cy));
    m.check_invertible()?;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_image_id: u64,
    pub copy_index: usize,
    pub angle_deg: f64,
    pub shear_x: f64,
    pub shear_y: f64,
}

impl Provenance {
    /// The map this sample was produced with, on a `width x height` canvas.
    pub fn transform(&self, width: u32, height: u32) -> Result<AffineMap> {
        build_transform(self.angle_deg, self.shear_x, self.shear_y, width, height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: Image,
    pub boxes: Vec<BBox>,
    /// For each output box, the index of the input box it came from.
    pub source_indices: Vec<usize>,
    pub provenance: Provenance,
}

/// Maps, clips and filters boxes; returns survivors with their source index.
pub fn map_boxes(
    m: &AffineMap,
    boxes: &[BBox],
    width: u32,
    height: u32,
    min_area: f64,
) -> Vec<(usize, BBox)> {
    boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let mapped = transform_box(m, b);
            clip_box(&mapped, width as f64, height as f64)
                .filter(|c| c.area() >= min_area)
                .map(|c| (i, c))
        })
        .collect()
}

/// Produces `cfg.copies_per_image` augmented copies of one image.
///
/// A draw that loses every box is redrawn up to [`MAX_REDRAWS`] times; if
/// all draws fail the whole source image is given up with
/// [`Error::AugmentExhausted`]. Images without boxes are never redrawn.
pub fn augment_sample<R: Rng>(
    img: &Image,
    boxes: &[BBox],
    source_image_id: u64,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<AugmentedSample>> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let mut samples = Vec::with_capacity(cfg.copies_per_image);
    for copy_index in 0..cfg.copies_per_image {
        let mut accepted = None;
        for _ in 0..=MAX_REDRAWS {
            let provenance = Provenance {
                source_image_id,
                copy_index,
                angle_deg: cfg.rotation_range_deg.sample(rng),
                shear_x: cfg.shear_range.sample(rng),
                shear_y: cfg.shear_range.sample(rng),
            };
            let m = provenance.transform(w, h)?;
            let kept = map_boxes(&m, boxes, w, h, cfg.min_box_area_px);
            if kept.is_empty() && !boxes.is_empty() {
                continue;
            }
            accepted = Some((provenance, m, kept));
            break;
        }
        let Some((provenance, m, kept)) = accepted else {
            return Err(Error::AugmentExhausted {
                attempts: MAX_REDRAWS + 1,
            });
        };
        let (source_indices, boxes) = kept.into_iter().unzip();
        samples.push(AugmentedSample {
            image: warp_image(img, &m, cfg.fill)?,
            boxes,
            source_indices,
            provenance,
        });
    }
    Ok(samples)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one image, independent of scheduling order.
pub fn image_rng(seed: u64, image_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(image_id)))
}

/// File name of the `k`-th augmented copy of `file_name`.
pub fn augmented_name(file_name: &str, k: usize) -> String {
    let path = Path::new(file_name);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_aug{k}.png"))
        .to_string_lossy()
        .into_owned()
}

#[derive(Debug)]
pub struct AugmentReport {
    /// Originals plus augmented copies, resolvable against the output directory.
    pub annotations: AnnotationSet,
    /// Images that could not be read or decoded; they are left out.
    pub failures: Vec<(u64, Error)>,
    /// Images whose copies were given up because no box survived.
    pub skipped: Vec<u64>,
}

struct Processed {
    record: ImageRecord,
    samples: Vec<AugmentedSample>,
}

/// Augments every image of `set` and writes the result under `out_dir`.
///
/// Originals are copied byte for byte next to their augmented copies
/// (`<stem>_aug<k>.png`), so the returned set resolves entirely against
/// `out_dir`. Originals keep their ids; new images and annotations get ids
/// above the current maxima, in source-id then copy order.
pub fn augment_dataset(
    set: &AnnotationSet,
    images_dir: &Path,
    cfg: &AugmentConfig,
    out_dir: &Path,
) -> Result<AugmentReport> {
    cfg.validate()?;
    set.validate()?;
    let mut images: Vec<&ImageRecord> = set.images.iter().collect();
    images.sort_by_key(|i| i.id);
    let mut anns: Vec<&Annotation> = set.annotations.iter().collect();
    anns.sort_by_key(|a| a.id);

    let mut names = std::collections::HashSet::new();
    for rec in &images {
        for k in 0..cfg.copies_per_image {
            if !names.insert(augmented_name(&rec.file_name, k)) {
                return Err(Error::Validation(format!(
                    "image {}: augmented file name {} collides with another image",
                    rec.id,
                    augmented_name(&rec.file_name, k)
                )));
            }
        }
    }

    let results: Vec<Result<Processed>> = images
        .par_iter()
        .map(|rec| {
            let boxes: Vec<BBox> = anns
                .iter()
                .filter(|a| a.image_id == rec.id)
                .map(|a| a.bbox)
                .collect();
            process_image(rec, &boxes, images_dir, cfg, out_dir)
        })
        .collect();

    let mut out = AnnotationSet {
        categories: set.categories.clone(),
        ..Default::default()
    };
    let mut failures = Vec::new();
    let mut skipped = Vec::new();
    let mut next_image = set.max_image_id().map_or(1, |m| m + 1);
    let mut next_ann = set.max_annotation_id().map_or(1, |m| m + 1);
    for (rec, result) in images.iter().zip(results) {
        let processed = match result {
            Ok(p) => p,
            Err(e) => {
                warn!("image {} ({}): {e}", rec.id, rec.file_name);
                failures.push((rec.id, e));
                continue;
            }
        };
        let source_anns: Vec<&Annotation> = anns
            .iter()
            .filter(|a| a.image_id == rec.id)
            .copied()
            .collect();
        out.images.push(processed.record.clone());
        out.annotations
            .extend(source_anns.iter().map(|a| (*a).clone()));
        if processed.samples.is_empty() && cfg.copies_per_image > 0 {
            warn!(
                "image {} ({}): no box survived {} draws, augmentation skipped",
                rec.id,
                rec.file_name,
                MAX_REDRAWS + 1
            );
            skipped.push(rec.id);
        }
        for sample in &processed.samples {
            let image_id = next_image;
            next_image += 1;
            out.images.push(ImageRecord {
                id: image_id,
                file_name: augmented_name(&rec.file_name, sample.provenance.copy_index),
                width: rec.width,
                height: rec.height,
            });
            for (b, &src) in sample.boxes.iter().zip(&sample.source_indices) {
                out.annotations.push(Annotation {
                    id: next_ann,
                    image_id,
                    bbox: *b,
                    category_id: source_anns[src].category_id,
                });
                next_ann += 1;
            }
        }
    }
    if !images.is_empty() && failures.len() == images.len() {
        let (_, first) = failures.swap_remove(0);
        return Err(first);
    }
    out.sort_by_id();
    Ok(AugmentReport {
        annotations: out,
        failures,
        skipped,
    })
}

fn process_image(
    rec: &ImageRecord,
    boxes: &[BBox],
    images_dir: &Path,
    cfg: &AugmentConfig,
    out_dir: &Path,
) -> Result<Processed> {
    let src = images_dir.join(&rec.file_name);
    let img = dataio::load_image(&src)?;
    if (img.width(), img.height()) != (rec.width, rec.height) {
        return Err(Error::Validation(format!(
            "image {}: file is {}x{} but annotations say {}x{}",
            rec.id,
            img.width(),
            img.height(),
            rec.width,
            rec.height
        )));
    }
    let mut rng = image_rng(cfg.seed, rec.id);
    let samples = match augment_sample(&img, boxes, rec.id, cfg, &mut rng) {
        Ok(s) => s,
        Err(Error::AugmentExhausted { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    copy_original(&src, &out_dir.join(&rec.file_name))?;
    for sample in &samples {
        let name = augmented_name(&rec.file_name, sample.provenance.copy_index);
        dataio::save_png(&sample.image, out_dir.join(name))?;
    }
    Ok(Processed {
        record: rec.clone(),
        samples,
    })
}

fn copy_original(src: &Path, dst: &PathBuf) -> Result<()> {
    if let (Ok(a), Ok(b)) = (src.canonicalize(), dst.canonicalize()) {
        if a == b {
            return Ok(());
        }
    }
    if let Some(dir) = dst.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::copy(src, dst).map_err(|e| Error::io(dst, e))?;
    Ok(())
}
