//! Single-class detection evaluation: greedy IoU matching, counts,
//! precision/recall/F1 and all-point interpolated average precision.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::AnnotationSet;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::refine::{check_single_image, rank_order, Detection, ImageId};

pub const DEFAULT_IOU_MATCH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedDetection {
    pub detection: Detection,
    /// Index into the image's ground-truth list, when matched.
    pub gt: Option<usize>,
}

/// Matching outcome for one image, detections in rank order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageMatches {
    pub entries: Vec<MatchedDetection>,
    pub num_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub images: Vec<ImageMatches>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchResult {
    fn push(&mut self, m: ImageMatches) {
        let tp = m.entries.iter().filter(|e| e.gt.is_some()).count();
        self.tp += tp;
        self.fp += m.entries.len() - tp;
        self.fn_ += m.num_gt - tp;
        self.images.push(m);
    }

    pub fn num_gt(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn num_detections(&self) -> usize {
        self.tp + self.fp
    }
}

impl FromIterator<ImageMatches> for MatchResult {
    fn from_iter<I: IntoIterator<Item = ImageMatches>>(iter: I) -> Self {
        let mut out = MatchResult::default();
        for m in iter {
            out.push(m);
        }
        out
    }
}

/// Field order matches the JSON key order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ap: f64,
    pub f1: f64,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub iou_match: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
}

fn check_iou_match(iou_match: f64) -> Result<()> {
    if iou_match > 0.0 && iou_match <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "IoU match threshold must lie in (0, 1], got {iou_match}"
        )))
    }
}

fn match_image(dets: &[Detection], gts: &[BBox], iou_match: f64) -> ImageMatches {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));
    let mut taken = vec![false; gts.len()];
    let entries = order
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let o = iou(&d.bbox, g);
                // strict comparison keeps the lower index on ties
                if o >= iou_match && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            MatchedDetection {
                detection: *d,
                gt: best.map(|(j, _)| j),
            }
        })
        .collect();
    ImageMatches {
        entries,
        num_gt: gts.len(),
    }
}

/// Greedy matching of one image's detections against its ground truths.
///
/// Detections are visited best-first; each claims the unclaimed ground truth
/// with the highest IoU, provided that IoU reaches `iou_match`.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_match: f64) -> Result<MatchResult> {
    check_iou_match(iou_match)?;
    check_single_image(dets)?;
    Ok(std::iter::once(match_image(dets, gts, iou_match)).collect())
}

/// All-point interpolated AP over the dataset-wide score sweep.
///
/// One precision/recall point is taken per distinct score, so detections
/// sharing a score enter the curve together.
pub fn average_precision(matches: &MatchResult) -> Result<f64> {
    let n_gt = matches.num_gt();
    if n_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut ranked: Vec<(f64, bool)> = matches
        .images
        .iter()
        .flat_map(|m| {
            m.entries
                .iter()
                .map(|e| (e.detection.score, e.gt.is_some()))
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    // (true positives, precision) at the end of each block of equal scores
    let mut points: Vec<(usize, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < ranked.len() {
        let score = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == score {
            if ranked[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp, tp as f64 / (tp + fp) as f64));
    }
    for k in (0..points.len().saturating_sub(1)).rev() {
        points[k].1 = points[k].1.max(points[k + 1].1);
    }
    // recall steps are summed as integer TP increments, so a perfect curve
    // integrates to exactly 1
    let mut area = 0.0;
    let mut prev_tp = 0;
    for &(tp, p) in &points {
        area += (tp - prev_tp) as f64 * p;
        prev_tp = tp;
    }
    let ap = area / n_gt as f64;
    Ok(ap)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Matches every image of `truth` (images without detections contribute
/// only misses) and aggregates counts.
pub fn match_dataset(
    dets: &BTreeMap<ImageId, Vec<Detection>>,
    truth: &AnnotationSet,
    iou_match: f64,
) -> Result<MatchResult> {
    check_iou_match(iou_match)?;
    let gts = truth.boxes_by_image();
    let unknown: Vec<ImageId> = dets
        .keys()
        .copied()
        .filter(|id| !gts.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownImageIds(unknown));
    }
    for list in dets.values() {
        check_single_image(list)?;
    }
    let empty = Vec::new();
    let per_image: Vec<ImageMatches> = gts
        .par_iter()
        .map(|(id, boxes)| match_image(dets.get(id).unwrap_or(&empty), boxes, iou_match))
        .collect();
    Ok(per_image.into_iter().collect())
}

pub fn report(matches: &MatchResult, iou_match: f64) -> Result<MetricsReport> {
    let precision = ratio(matches.tp, matches.tp + matches.fp);
    let recall = ratio(matches.tp, matches.tp + matches.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport {
        ap: average_precision(matches)?,
        f1,
        fn_: matches.fn_,
        fp: matches.fp,
        iou_match,
        precision,
        recall,
        tp: matches.tp,
    })
}

/// Dataset-level metrics of `dets` against `truth`.
pub fn evaluate(
    dets: &BTreeMap<ImageId, Vec<Detection>>,
    truth: &AnnotationSet,
    iou_match: f64,
) -> Result<MetricsReport> {
    let matches = match_dataset(dets, truth, iou_match)?;
    report(&matches, iou_match)
}
