//! Detection refinement: a confidence gate followed by greedy overlap
//! suppression that keeps the highest-scoring box of every overlapping group.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub type ImageId = u64;

/// Category id of the single ulcer class.
pub const ULCER_CATEGORY: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: ImageId,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: ImageId, bbox: BBox, score: f64) -> Self {
        Detection {
            image_id,
            category_id: ULCER_CATEGORY,
            bbox,
            score,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.bbox.is_valid() && (0.0..=1.0).contains(&self.score)
    }
}

/// Ranking used wherever detections are visited best-first: score
/// descending, then larger area, then box coordinates and category, so two
/// distinct detections never tie and the order does not depend on input
/// position.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.bbox.area().total_cmp(&a.bbox.area()))
        .then_with(|| a.bbox.x.total_cmp(&b.bbox.x))
        .then_with(|| a.bbox.y.total_cmp(&b.bbox.y))
        .then_with(|| a.bbox.w.total_cmp(&b.bbox.w))
        .then_with(|| a.bbox.h.total_cmp(&b.bbox.h))
        .then_with(|| a.category_id.cmp(&b.category_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Detections scoring below this are discarded.
    pub score_threshold: f64,
    /// A detection is suppressed when its IoU with an accepted one exceeds
    /// this. `0.0` suppresses on any positive overlap.
    pub overlap_iou_threshold: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            score_threshold: 0.5,
            overlap_iou_threshold: 0.0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::InvalidConfig(format!(
                "score threshold must lie in [0, 1], got {}",
                self.score_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.overlap_iou_threshold) {
            return Err(Error::InvalidConfig(format!(
                "overlap IoU threshold must lie in [0, 1), got {}",
                self.overlap_iou_threshold
            )));
        }
        Ok(())
    }
}

/// Keeps detections with `score >= threshold`, in input order.
pub fn score_filter(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.score >= threshold)
        .copied()
        .collect()
}

/// Greedy suppression over the detections of one image.
///
/// Candidates are visited in [`rank_order`]; each is accepted unless its IoU
/// with an already accepted detection exceeds `iou_threshold`. The result is
/// in descending-score order.
pub fn suppress_overlaps(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    check_single_image(dets)?;
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));

    let mut kept: Vec<Detection> = Vec::new();
    for cand in order {
        if kept
            .iter()
            .all(|k| iou(&k.bbox, &cand.bbox) <= iou_threshold)
        {
            kept.push(*cand);
        }
    }
    Ok(kept)
}

pub(crate) fn check_single_image(dets: &[Detection]) -> Result<()> {
    if let Some(first) = dets.first() {
        if let Some(other) = dets.iter().find(|d| d.image_id != first.image_id) {
            return Err(Error::MixedImageIds {
                first: first.image_id,
                other: other.image_id,
            });
        }
    }
    Ok(())
}

/// Score gate then overlap suppression, per image. Every input image is
/// present in the output, possibly with an empty list.
pub fn refine(
    dets_by_image: &BTreeMap<ImageId, Vec<Detection>>,
    cfg: &RefineConfig,
) -> Result<BTreeMap<ImageId, Vec<Detection>>> {
    cfg.validate()?;
    dets_by_image
        .par_iter()
        .map(|(&id, dets)| {
            let passed = score_filter(dets, cfg.score_threshold);
            suppress_overlaps(&passed, cfg.overlap_iou_threshold).map(|kept| (id, kept))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

/// Groups a flat detection list by image id, preserving the relative order
/// within each image.
pub fn group_by_image(
    dets: impl IntoIterator<Item = Detection>,
) -> BTreeMap<ImageId, Vec<Detection>> {
    let mut map: BTreeMap<ImageId, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        map.entry(d.image_id).or_default().push(d);
    }
    map
}

/// Flattens a grouped map back to a list, image by image.
pub fn flatten(map: &BTreeMap<ImageId, Vec<Detection>>) -> Vec<Detection> {
    map.values().flatten().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection {
        Detection::new(1, BBox::new(x, y, w, h).unwrap(), score)
    }

    /// Textbook greedy NMS written independently: repeatedly take the best
    /// remaining candidate and delete everything overlapping it.
    fn brute_force(dets: &[Detection], thr: f64) -> Vec<Detection> {
        let mut remaining: Vec<Detection> = dets.to_vec();
        let mut out = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                let (a, b) = (&remaining[i], &remaining[best]);
                let better = a.score > b.score
                    || (a.score == b.score && a.bbox.area() > b.bbox.area())
                    || (a.score == b.score
                        && a.bbox.area() == b.bbox.area()
                        && (a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h)
                            < (b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h));
                if better {
                    best = i;
                }
            }
            let chosen = remaining.remove(best);
            remaining.retain(|r| iou(&r.bbox, &chosen.bbox) <= thr);
            out.push(chosen);
        }
        out
    }

    #[test]
    fn score_filter_examples() {
        assert!(score_filter(&[], 0.5).is_empty());
        assert!(score_filter(&[det(0.0, 0.0, 1.0, 1.0, 0.49)], 0.5).is_empty());
        let kept = score_filter(
            &[
                det(0.0, 0.0, 1.0, 1.0, 0.9),
                det(0.0, 0.0, 1.0, 1.0, 0.5),
                det(0.0, 0.0, 1.0, 1.0, 0.3),
            ],
            0.5,
        );
        let scores: Vec<f64> = kept.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.5]);
    }

    #[test]
    fn overlapping_pair_keeps_best() {
        // IoU = 0.6: 10x10 boxes shifted by 2.5 => 75 / 125
        let a = det(0.0, 0.0, 10.0, 10.0, 0.6);
        let b = det(2.5, 0.0, 10.0, 10.0, 0.9);
        assert!((iou(&a.bbox, &b.bbox) - 0.6).abs() < 1e-12);
        assert_eq!(suppress_overlaps(&[a, b], 0.0).unwrap(), vec![b]);
    }

    #[test]
    fn disjoint_pair_survives() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(50.0, 50.0, 10.0, 10.0, 0.6);
        assert_eq!(suppress_overlaps(&[b, a], 0.0).unwrap(), vec![a, b]);
    }

    #[test]
    fn chain_keeps_both_ends() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(8.0, 0.0, 10.0, 10.0, 0.8);
        let c = det(16.0, 0.0, 10.0, 10.0, 0.7);
        assert!(iou(&a.bbox, &c.bbox) == 0.0);
        let got = suppress_overlaps(&[c, b, a], 0.0).unwrap();
        assert_eq!(got, vec![a, c]);
        assert_eq!(got, brute_force(&[a, b, c], 0.0));
    }

    #[test]
    fn mixed_images_rejected() {
        let mut b = det(0.0, 0.0, 1.0, 1.0, 0.9);
        b.image_id = 2;
        assert!(matches!(
            suppress_overlaps(&[det(0.0, 0.0, 1.0, 1.0, 0.9), b], 0.0),
            Err(Error::MixedImageIds { first: 1, other: 2 })
        ));
    }

    #[test]
    fn refine_composes_both_rules() {
        assert!(refine(&BTreeMap::new(), &RefineConfig::default())
            .unwrap()
            .is_empty());
        let a = det(100.0, 100.0, 10.0, 10.0, 0.4);
        let b = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let c = det(3.0, 3.0, 10.0, 10.0, 0.6);
        let mut input = BTreeMap::new();
        input.insert(1, vec![a, b, c]);
        input.insert(7, vec![Detection { image_id: 7, ..a }]);
        let out = refine(&input, &RefineConfig::default()).unwrap();
        assert_eq!(out[&1], vec![b]);
        assert!(out[&7].is_empty());
    }

    #[test]
    fn config_bounds() {
        assert!(RefineConfig {
            score_threshold: 1.2,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RefineConfig {
            overlap_iou_threshold: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec((0u8..40, 0u8..40, 1u8..20, 1u8..20, 0u8..=20), 0..10).prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, s)| det(x as f64, y as f64, w as f64, h as f64, s as f64 / 20.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(dets in arb_dets(), thr in prop::sample::select(vec![0.0, 0.3, 0.5])) {
            prop_assert_eq!(suppress_overlaps(&dets, thr).unwrap(), brute_force(&dets, thr));
        }

        #[test]
        fn refine_properties(dets in arb_dets(), perm_seed in any::<u64>()) {
            let cfg = RefineConfig::default();
            let map = group_by_image(dets.clone());
            let once = refine(&map, &cfg).unwrap();
            let twice = refine(&once, &cfg).unwrap();
            prop_assert_eq!(&once, &twice);
            let out = flatten(&once);
            for d in &out {
                prop_assert!(d.score >= cfg.score_threshold);
                prop_assert!(dets.contains(d));
            }
            for (i, a) in out.iter().enumerate() {
                for b in &out[i + 1..] {
                    prop_assert!(iou(&a.bbox, &b.bbox) <= cfg.overlap_iou_threshold);
                }
            }
            // permuting the input never changes the result
            let mut shuffled = dets.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            prop_assert_eq!(refine(&group_by_image(shuffled), &cfg).unwrap(), once);
        }
    }
}
