use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_error, read_file, to_canonical_json, write_file, Coord};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::refine::{rank_order, Detection, ULCER_CATEGORY};

#[derive(Deserialize)]
struct RawDetection {
    image_id: u64,
    #[serde(default = "default_category")]
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

fn default_category() -> u64 {
    ULCER_CATEGORY
}

#[derive(Serialize)]
struct DetectionOut {
    bbox: [Coord; 4],
    category_id: u64,
    image_id: u64,
    score: f64,
}

/// Sorts detections by image id, then best-first within each image.
pub fn canonical_order(dets: &mut [Detection]) {
    dets.sort_by(|a, b| a.image_id.cmp(&b.image_id).then_with(|| rank_order(a, b)));
}

/// Parses a detection array, validating each element and naming its index
/// on failure.
pub fn parse_detections(path: &Path, bytes: &[u8]) -> Result<Vec<Detection>> {
    let items: Vec<serde_json::Value> =
        serde_json::from_slice(bytes).map_err(|e| parse_error(path, bytes, &e))?;
    items
        .into_iter()
        .enumerate()
        .map(|(index, item)| {
            let raw: RawDetection = serde_json::from_value(item).map_err(|e| {
                Error::Validation(format!("detection [{index}]: {e}"))
            })?;
            let [x, y, w, h] = raw.bbox;
            let bbox = BBox::new(x, y, w, h).map_err(|_| {
                Error::Validation(format!(
                    "detection [{index}]: box ({x}, {y}, {w}, {h}) must have positive width and height"
                ))
            })?;
            if !(0.0..=1.0).contains(&raw.score) {
                return Err(Error::Validation(format!(
                    "detection [{index}]: score {} outside [0, 1]",
                    raw.score
                )));
            }
            Ok(Detection {
                image_id: raw.image_id,
                category_id: raw.category_id,
                bbox,
                score: raw.score,
            })
        })
        .collect()
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    parse_detections(path, &bytes)
}

pub(crate) fn detections_to_json(dets: &[Detection]) -> Vec<u8> {
    let mut sorted = dets.to_vec();
    canonical_order(&mut sorted);
    let out: Vec<DetectionOut> = sorted
        .iter()
        .map(|d| DetectionOut {
            bbox: Coord::bbox(&d.bbox),
            category_id: d.category_id,
            image_id: d.image_id,
            score: d.score,
        })
        .collect();
    to_canonical_json(&out)
}

/// Writes detections in canonical order.
pub fn save_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &detections_to_json(dets))
}
