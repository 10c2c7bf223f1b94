use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnnotationSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            train_fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_fraction > 0.0 && self.train_fraction < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )))
        }
    }

    /// Number of training images out of `n`: `floor(fraction * n)` clamped
    /// to `[1, n - 1]`.
    pub fn train_count(&self, n: usize) -> usize {
        // the nudge keeps products like 0.29 * 100 from flooring to 28
        let raw = (self.train_fraction * n as f64 + 1e-9).floor() as usize;
        raw.clamp(1, n.saturating_sub(1).max(1))
    }
}

/// Partitions a dataset by image into `(train, validation)`.
///
/// Image ids are sorted, shuffled with a generator seeded from `spec.seed`, and
/// the first [`SplitSpec::train_count`] go to training. Annotations follow
/// their image; categories are copied to both halves.
pub fn split_dataset(
    set: &AnnotationSet,
    spec: &SplitSpec,
) -> Result<(AnnotationSet, AnnotationSet)> {
    spec.validate()?;
    let n = set.images.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "splitting needs at least 2 images, got {n}"
        )));
    }
    let mut ids: Vec<u64> = set.images.iter().map(|i| i.id).collect();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let train_ids: HashSet<u64> = ids[..spec.train_count(n)].iter().copied().collect();

    let part = |in_train: bool| {
        let mut out = AnnotationSet {
            images: set
                .images
                .iter()
                .filter(|i| train_ids.contains(&i.id) == in_train)
                .cloned()
                .collect(),
            annotations: set
                .annotations
                .iter()
                .filter(|a| train_ids.contains(&a.image_id) == in_train)
                .cloned()
                .collect(),
            categories: set.categories.clone(),
        };
        out.sort_by_id();
        out
    };
    Ok((part(true), part(false)))
}
