//! Synthetic datasets written to a temporary directory.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tempfile::TempDir;
use ulcerkit::dataio::{self, Annotation, AnnotationSet, Category, ImageRecord};
use ulcerkit::{BBox, Image};

pub const BIN: &str = env!("CARGO_BIN_EXE_ulcerkit");

pub struct Fixture {
    pub dir: TempDir,
    pub set: AnnotationSet,
    pub images: PathBuf,
    pub ann: PathBuf,
    pub dets: PathBuf,
}

impl Fixture {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

/// A tinted background with each box painted as a solid patch.
pub fn paint(width: u32, height: u32, boxes: &[BBox], tint: [u8; 3]) -> Image {
    Image::from_fn(width, height, |x, y| {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        let inside = boxes
            .iter()
            .any(|b| cx >= b.x && cx < b.right() && cy >= b.y && cy < b.bottom());
        if inside {
            [200, 60, 70]
        } else {
            [
                tint[0].saturating_add((x % 16) as u8),
                tint[1].saturating_add((y % 16) as u8),
                tint[2],
            ]
        }
    })
    .unwrap()
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// `n` images of varying size with 0 to 3 boxes each, boxes on a
/// 2-decimal grid so they survive a save/load round trip unchanged.
pub fn synthetic_set(n: usize, seed: u64) -> (AnnotationSet, Vec<Image>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = AnnotationSet {
        categories: vec![Category {
            id: 1,
            name: "ulcer".into(),
        }],
        ..Default::default()
    };
    let mut images = Vec::new();
    let mut next_ann = 1;
    for i in 0..n {
        let id = i as u64 + 1;
        let width = rng.random_range(48..96u32);
        let height = rng.random_range(40..80u32);
        let mut boxes = Vec::new();
        for _ in 0..rng.random_range(0..4) {
            let w = round2(rng.random_range(8.0..width as f64 / 2.0));
            let h = round2(rng.random_range(8.0..height as f64 / 2.0));
            let x = round2(rng.random_range(0.0..width as f64 - w));
            let y = round2(rng.random_range(0.0..height as f64 - h));
            let b = BBox::new(x, y, w, h).unwrap();
            boxes.push(b);
            set.annotations.push(Annotation {
                id: next_ann,
                image_id: id,
                bbox: b,
                category_id: 1,
            });
            next_ann += 1;
        }
        let tint = [
            rng.random_range(40..120),
            rng.random_range(40..120),
            rng.random_range(40..120),
        ];
        images.push(paint(width, height, &boxes, tint));
        set.images.push(ImageRecord {
            id,
            file_name: format!("img_{id:03}.png"),
            width,
            height,
        });
    }
    (set, images)
}

/// Detector-style output: jittered hits, duplicates, low-score noise and
/// false positives, with extra fields a Python exporter might add.
pub fn raw_detections(set: &AnnotationSet, seed: u64) -> serde_json::Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for rec in &set.images {
        let gts: Vec<&Annotation> = set
            .annotations
            .iter()
            .filter(|a| a.image_id == rec.id)
            .collect();
        for a in gts {
            for _ in 0..rng.random_range(1..4) {
                let b = a.bbox;
                let jx = rng.random_range(-1.5..1.5);
                let jy = rng.random_range(-1.5..1.5);
                out.push(json!({
                    "image_id": rec.id,
                    "category_id": 1,
                    "bbox": [b.x + jx, b.y + jy, b.w, b.h],
                    "score": rng.random_range(0.3..1.0),
                    "model": "efficientdet-d0",
                }));
            }
        }
        for _ in 0..rng.random_range(0..3) {
            let w = rng.random_range(4.0..12.0);
            let h = rng.random_range(4.0..12.0);
            out.push(json!({
                "image_id": rec.id,
                "category_id": 1,
                "bbox": [
                    rng.random_range(0.0..rec.width as f64 - w),
                    rng.random_range(0.0..rec.height as f64 - h),
                    w,
                    h
                ],
                "score": rng.random_range(0.0..1.0),
            }));
        }
    }
    serde_json::Value::Array(out)
}

/// Writes images, annotations and raw detections under a fresh directory.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (set, images) = synthetic_set(n, seed);
    let images_dir = dir.path().join("images");
    for (rec, img) in set.images.iter().zip(&images) {
        dataio::save_png(img, images_dir.join(&rec.file_name)).unwrap();
    }
    let ann = dir.path().join("annotations.json");
    dataio::save_annotations(&set, &ann).unwrap();
    let dets = dir.path().join("raw_dets.json");
    let body = serde_json::to_vec_pretty(&raw_detections(&set, seed ^ 0xD37)).unwrap();
    std::fs::write(&dets, body).unwrap();
    Fixture {
        dir,
        set,
        images: images_dir,
        ann,
        dets,
    }
}

pub fn run_cli(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ULCERKIT_LOG")
        .output()
        .expect("spawn ulcerkit")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn ok(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}
