//! Persistence: COCO-style annotation files, detection files, image codecs,
//! dataset splitting, overlay rendering and metrics output.
//!
//! Everything written here is canonical: object keys are sorted, arrays are
//! ordered by id, and box coordinates carry exactly two decimals, so equal
//! values always produce byte-identical files.

mod codec;
mod detections;
mod render;
mod split;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::geometry::BBox;

pub use codec::{load_image, save_png};
pub use detections::{canonical_order, load_detections, parse_detections, save_detections};
pub use render::{draw_overlay, render_overlay, score_label, DET_COLOR, GT_COLOR};
pub use split::{split_dataset, SplitSpec};

/// Slack allowed when checking that a box lies inside its image. Coordinates
/// are stored with two decimals, so a saved box can overshoot by one
/// quantization step per edge.
pub const BOUNDS_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub file_name: String,
    pub height: u32,
    pub id: u64,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub bbox: BBox,
    pub category_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

/// Images, ground-truth boxes and categories of a dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl AnnotationSet {
    /// Checks every structural invariant, naming the first offending id.
    pub fn validate(&self) -> Result<()> {
        let mut dims: HashMap<u64, (u32, u32)> = HashMap::new();
        for img in &self.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::Validation(format!(
                    "image {}: zero width or height",
                    img.id
                )));
            }
            if dims.insert(img.id, (img.width, img.height)).is_some() {
                return Err(Error::Validation(format!(
                    "image id {} is not unique",
                    img.id
                )));
            }
        }
        let mut cats = HashSet::new();
        for cat in &self.categories {
            if !cats.insert(cat.id) {
                return Err(Error::Validation(format!(
                    "category id {} is not unique",
                    cat.id
                )));
            }
        }
        let mut ann_ids = HashSet::new();
        for ann in &self.annotations {
            if !ann_ids.insert(ann.id) {
                return Err(Error::Validation(format!(
                    "annotation id {} is not unique",
                    ann.id
                )));
            }
            let Some(&(w, h)) = dims.get(&ann.image_id) else {
                return Err(Error::Validation(format!(
                    "annotation {}: image_id {} does not reference an existing image",
                    ann.id, ann.image_id
                )));
            };
            if !cats.contains(&ann.category_id) {
                return Err(Error::Validation(format!(
                    "annotation {}: category_id {} does not reference an existing category",
                    ann.id, ann.category_id
                )));
            }
            let b = &ann.bbox;
            if !b.is_valid() {
                return Err(Error::Validation(format!(
                    "annotation {}: box ({}, {}, {}, {}) must have positive width and height",
                    ann.id, b.x, b.y, b.w, b.h
                )));
            }
            if b.x < -BOUNDS_TOLERANCE
                || b.y < -BOUNDS_TOLERANCE
                || b.right() > w as f64 + BOUNDS_TOLERANCE
                || b.bottom() > h as f64 + BOUNDS_TOLERANCE
            {
                return Err(Error::Validation(format!(
                    "annotation {}: box ({}, {}, {}, {}) exceeds image {} bounds {}x{}",
                    ann.id, b.x, b.y, b.w, b.h, ann.image_id, w, h
                )));
            }
        }
        Ok(())
    }

    /// Sorts all three arrays by id.
    pub fn sort_by_id(&mut self) {
        self.images.sort_by_key(|i| i.id);
        self.annotations.sort_by_key(|a| a.id);
        self.categories.sort_by_key(|c| c.id);
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Ground-truth boxes per image, ordered by annotation id. Every image is
    /// present, including those without annotations.
    pub fn boxes_by_image(&self) -> BTreeMap<u64, Vec<BBox>> {
        let mut anns: Vec<&Annotation> = self.annotations.iter().collect();
        anns.sort_by_key(|a| a.id);
        let mut map: BTreeMap<u64, Vec<BBox>> =
            self.images.iter().map(|i| (i.id, Vec::new())).collect();
        for a in anns {
            map.entry(a.image_id).or_default().push(a.bbox);
        }
        map
    }

    pub fn max_image_id(&self) -> Option<u64> {
        self.images.iter().map(|i| i.id).max()
    }

    pub fn max_annotation_id(&self) -> Option<u64> {
        self.annotations.iter().map(|a| a.id).max()
    }
}

#[derive(Deserialize)]
struct RawAnnotationSet {
    #[serde(default)]
    images: Vec<ImageRecord>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    bbox: [f64; 4],
    category_id: u64,
}

#[derive(Serialize)]
struct AnnotationSetOut<'a> {
    annotations: Vec<AnnotationOut>,
    categories: Vec<CategoryOut<'a>>,
    images: Vec<&'a ImageRecord>,
}

#[derive(Serialize)]
struct AnnotationOut {
    bbox: [Coord; 4],
    category_id: u64,
    id: u64,
    image_id: u64,
}

#[derive(Serialize)]
struct CategoryOut<'a> {
    id: u64,
    name: &'a str,
}

/// A box coordinate written with exactly two decimals.
#[derive(Clone, Copy)]
pub(crate) struct Coord(pub f64);

impl Coord {
    pub(crate) fn bbox(b: &BBox) -> [Coord; 4] {
        [Coord(b.x), Coord(b.y), Coord(b.w), Coord(b.h)]
    }
}

impl Serialize for Coord {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut text = format!("{:.2}", self.0);
        if text == "-0.00" {
            text = "0.00".to_owned();
        }
        let raw = RawValue::from_string(text).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Maps a serde_json error onto a byte offset into `bytes`.
pub(crate) fn parse_error(path: &Path, bytes: &[u8], err: &serde_json::Error) -> Error {
    let (line, column) = (err.line(), err.column());
    let mut offset = 0usize;
    if line > 0 {
        let mut current = 1;
        for (i, &b) in bytes.iter().enumerate() {
            if current == line {
                offset = i;
                break;
            }
            if b == b'\n' {
                current += 1;
                offset = i + 1;
            }
        }
        offset = (offset + column.saturating_sub(1)).min(bytes.len());
    }
    Error::Parse {
        path: path.to_path_buf(),
        offset,
        message: err.to_string(),
    }
}

pub(crate) fn to_canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory JSON serialization");
    out.push(b'\n');
    out
}

/// Parses and validates annotation JSON.
pub fn parse_annotations(path: &Path, bytes: &[u8]) -> Result<AnnotationSet> {
    let raw: RawAnnotationSet =
        serde_json::from_slice(bytes).map_err(|e| parse_error(path, bytes, &e))?;
    let annotations = raw
        .annotations
        .into_iter()
        .map(|a| Annotation {
            id: a.id,
            image_id: a.image_id,
            bbox: BBox {
                x: a.bbox[0],
                y: a.bbox[1],
                w: a.bbox[2],
                h: a.bbox[3],
            },
            category_id: a.category_id,
        })
        .collect();
    let set = AnnotationSet {
        images: raw.images,
        annotations,
        categories: raw.categories,
    };
    set.validate()?;
    Ok(set)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    parse_annotations(path, &bytes)
}

/// Canonical JSON bytes for a set.
pub fn annotations_to_json(set: &AnnotationSet) -> Vec<u8> {
    let mut images: Vec<&ImageRecord> = set.images.iter().collect();
    images.sort_by_key(|i| i.id);
    let mut annotations: Vec<AnnotationOut> = set
        .annotations
        .iter()
        .map(|a| AnnotationOut {
            bbox: Coord::bbox(&a.bbox),
            category_id: a.category_id,
            id: a.id,
            image_id: a.image_id,
        })
        .collect();
    annotations.sort_by_key(|a| a.id);
    let mut categories: Vec<CategoryOut> = set
        .categories
        .iter()
        .map(|c| CategoryOut {
            id: c.id,
            name: &c.name,
        })
        .collect();
    categories.sort_by_key(|c| c.id);
    to_canonical_json(&AnnotationSetOut {
        annotations,
        categories,
        images,
    })
}

pub fn save_annotations(set: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &annotations_to_json(set))
}

pub fn metrics_to_json(report: &MetricsReport) -> Vec<u8> {
    to_canonical_json(report)
}

pub const METRICS_CSV_HEADER: &str = "iou_match,tp,fp,fn,precision,recall,f1,ap";

pub fn metrics_to_csv(report: &MetricsReport) -> String {
    format!(
        "{METRICS_CSV_HEADER}\n{},{},{},{},{},{},{},{}\n",
        report.iou_match,
        report.tp,
        report.fp,
        report.fn_,
        report.precision,
        report.recall,
        report.f1,
        report.ap
    )
}

pub fn save_metrics_json(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &metrics_to_json(report))
}

pub fn save_metrics_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), metrics_to_csv(report).as_bytes())
}
