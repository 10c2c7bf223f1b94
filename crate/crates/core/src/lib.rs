//! Detection-pipeline toolkit for single-class lesion detection.
//!
//! The crate wraps an external detector with the stages around it:
//!
//! 1. [`imageops`]: Shades-of-Gray color constancy and affine warping.
//! 2. [`augment`]: random rotation and shear applied identically to pixels
//!    and boxes, with recorded provenance.
//! 3. [`refine`]: a score gate and greedy overlap suppression that keeps the
//!    highest-scoring box of each overlapping group.
//! 4. [`eval`]: greedy IoU matching, precision/recall/F1 and average precision.
//! 5. [`dataio`]: COCO-style annotations, detection files, image codecs,
//!    deterministic splits and overlay rendering.
//!
//! [`cli`] chains the stages as batch subcommands.

pub mod augment;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imageops;
pub mod refine;

pub use error::{Error, Result};
pub use geometry::{AffineMap, BBox};
pub use imageops::Image;
pub use refine::{Detection, RefineConfig};

/// Reference COCO test AP of the EfficientDet family (D0 through D7), kept
/// for documentation; nothing in the toolkit depends on these values.
pub const EFFICIENTDET_COCO_TEST_AP: [(&str, f64); 8] = [
    ("D0", 33.8),
    ("D1", 39.6),
    ("D2", 43.0),
    ("D3", 45.8),
    ("D4", 49.4),
    ("D5", 50.7),
    ("D6", 51.7),
    ("D7", 53.7),
];
