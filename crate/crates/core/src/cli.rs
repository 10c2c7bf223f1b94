//! Batch command-line entry point.
//!
//! Each subcommand prints a one-line JSON summary on stdout; diagnostics go
//! to stderr through `log`, with verbosity taken from `ULCERKIT_LOG`.
//! Exit status: 0 success, 1 validation error, 2 I/O error, 64 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::augment::{augment_dataset, AugmentConfig, Range};
use crate::dataio::{self, AnnotationSet, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport, DEFAULT_IOU_MATCH};
use crate::imageops::{shades_of_gray, ColorConstancyConfig};
use crate::refine::{self, group_by_image, RefineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

pub const LOG_ENV: &str = "ULCERKIT_LOG";

#[derive(Parser, Debug)]
#[command(
    name = "ulcerkit",
    version,
    about = "Detection pipeline stages: color constancy, augmentation, splitting, refinement, evaluation"
)]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-image work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Apply Shades-of-Gray color constancy to a directory of images.
    Preprocess(PreprocessArgs),
    /// Write rotated and sheared copies of a dataset with consistent boxes.
    Augment(AugmentArgs),
    /// Split an annotation file into train and validation sets by image.
    Split(SplitArgs),
    /// Drop low-score detections and suppress overlapping boxes.
    Refine(RefineArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Draw ground truth and detections over each image.
    Render(RenderArgs),
    /// preprocess, then refine, then eval over provided detections.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct ColorFlags {
    /// Minkowski norm order (1 = gray world).
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Debug)]
struct RefineFlags {
    #[arg(long = "score-thresh")]
    score_thresh: Option<f64>,
    /// Suppress when IoU with a kept box exceeds this (0 = any overlap).
    #[arg(long = "iou-thresh")]
    iou_thresh: Option<f64>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Process only the annotated images and write a matching annotations.json.
    #[arg(long)]
    ann: Option<PathBuf>,
    #[command(flatten)]
    color: ColorFlags,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    ann: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    copies: Option<usize>,
    #[arg(long = "rot-min", allow_hyphen_values = true)]
    rot_min: Option<f64>,
    #[arg(long = "rot-max", allow_hyphen_values = true)]
    rot_max: Option<f64>,
    #[arg(long = "shear-min", allow_hyphen_values = true)]
    shear_min: Option<f64>,
    #[arg(long = "shear-max", allow_hyphen_values = true)]
    shear_max: Option<f64>,
    #[arg(long = "min-box-area")]
    min_box_area: Option<f64>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    ann: Option<PathBuf>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `<stem>_train.json` and `<stem>_val.json` (default: next to --ann).
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    refine: RefineFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long)]
    ann: Option<PathBuf>,
    #[arg(long = "iou-match")]
    iou_match: Option<f64>,
    /// Metrics JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    ann: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dets: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    ann: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    color: ColorFlags,
    #[command(flatten)]
    refine: RefineFlags,
    #[arg(long = "iou-match")]
    iou_match: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    pub seed: Option<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train_fraction: SplitSpec::DEFAULT_TRAIN_FRACTION,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub iou_match: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            iou_match: DEFAULT_IOU_MATCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub ann: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub dets: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Every stage's settings, loadable from one TOML file.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub color: ColorConstancyConfig,
    pub augment: AugmentConfig,
    pub refine: RefineConfig,
    pub split: SplitSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
    pub jobs: Option<usize>,
    /// Whether `augment.seed` was written in the file.
    #[serde(skip)]
    pub augment_seed_set: bool,
}

impl PipelineConfig {
    /// Parses a TOML config. Relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let invalid = |e: toml::de::Error| Error::InvalidConfig(format!("{}: {e}", path.display()));
        let raw: toml::Table = toml::from_str(&text).map_err(invalid)?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(invalid)?;
        cfg.augment_seed_set = raw.get("augment").and_then(|a| a.get("seed")).is_some();
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.ann,
            &mut cfg.paths.images,
            &mut cfg.paths.dets,
            &mut cfg.paths.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.color.validate()?;
        self.augment.validate()?;
        self.refine.validate()?;
        SplitSpec::new(self.split.train_fraction, 0).validate()?;
        if !(self.eval.iou_match > 0.0 && self.eval.iou_match <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou_match must lie in (0, 1], got {}",
                self.eval.iou_match
            )));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
        }
        Ok(())
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let started = Instant::now();
    match execute(cli) {
        Ok(mut summary) => {
            summary["wall_ms"] = json!(started.elapsed().as_secs_f64() * 1000.0);
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_VALIDATION
            }
        }
    }
}

fn execute(cli: Cli) -> Result<Value> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    cfg.validate()?;
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cfg.jobs {
            builder = builder.num_threads(n);
        }
        builder
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?
    };
    pool.install(|| dispatch(cli.command, cfg))
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Validation(format!("missing required --{name}")))
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Validation(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn apply_color(cfg: &mut ColorConstancyConfig, flags: &ColorFlags) -> Result<()> {
    if let Some(p) = flags.p {
        cfg.p = p;
    }
    if let Some(e) = flags.epsilon {
        cfg.epsilon = e;
    }
    cfg.validate()
}

fn apply_refine(cfg: &mut RefineConfig, flags: &RefineFlags) -> Result<()> {
    if let Some(t) = flags.score_thresh {
        cfg.score_threshold = t;
    }
    if let Some(t) = flags.iou_thresh {
        cfg.overlap_iou_threshold = t;
    }
    cfg.validate()
}

fn dispatch(command: Command, mut cfg: PipelineConfig) -> Result<Value> {
    let paths = cfg.paths.clone();
    match command {
        Command::Preprocess(a) => {
            apply_color(&mut cfg.color, &a.color)?;
            let images = existing(
                required(a.images, &paths.images, "images")?,
                "image directory",
            )?;
            let out = required(a.out, &paths.out, "out")?;
            let ann = a.ann.map(|p| existing(p, "annotation file")).transpose()?;
            let done = preprocess_stage(&images, &out, ann.as_deref(), &cfg.color)?;
            Ok(json!({
                "command": "preprocess",
                "images": done.count,
                "out_dir": out,
                "annotations": done.annotations,
            }))
        }
        Command::Augment(a) => {
            let seed = a
                .seed
                .or(cfg.augment_seed_set.then_some(cfg.augment.seed))
                .ok_or_else(|| Error::Validation("augment needs an explicit --seed".into()))?;
            let aug = &mut cfg.augment;
            aug.seed = seed;
            if let Some(c) = a.copies {
                aug.copies_per_image = c;
            }
            let rot = &mut aug.rotation_range_deg;
            *rot = Range::new(a.rot_min.unwrap_or(rot.min), a.rot_max.unwrap_or(rot.max));
            let shear = &mut aug.shear_range;
            *shear = Range::new(
                a.shear_min.unwrap_or(shear.min),
                a.shear_max.unwrap_or(shear.max),
            );
            if let Some(m) = a.min_box_area {
                aug.min_box_area_px = m;
            }
            aug.validate()?;
            let ann = existing(required(a.ann, &paths.ann, "ann")?, "annotation file")?;
            let images = existing(
                required(a.images, &paths.images, "images")?,
                "image directory",
            )?;
            let out = required(a.out, &paths.out, "out")?;
            let set = dataio::load_annotations(&ann)?;
            let report = augment_dataset(&set, &images, &cfg.augment, &out)?;
            let out_ann = out.join("annotations.json");
            dataio::save_annotations(&report.annotations, &out_ann)?;
            Ok(json!({
                "command": "augment",
                "images_in": set.images.len(),
                "images_out": report.annotations.images.len(),
                "annotations_out": report.annotations.annotations.len(),
                "skipped": report.skipped,
                "failed": report.failures.iter().map(|(id, e)| json!({"image_id": id, "error": e.to_string()})).collect::<Vec<_>>(),
                "annotations": out_ann,
            }))
        }
        Command::Split(a) => {
            let seed = a
                .seed
                .or(cfg.split.seed)
                .ok_or_else(|| Error::Validation("split needs an explicit --seed".into()))?;
            let spec = SplitSpec::new(a.fraction.unwrap_or(cfg.split.train_fraction), seed);
            spec.validate()?;
            let ann = existing(required(a.ann, &paths.ann, "ann")?, "annotation file")?;
            let out_dir = a
                .out_dir
                .or(paths.out)
                .unwrap_or_else(|| ann.parent().map(Path::to_path_buf).unwrap_or_default());
            let stem = ann
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "annotations".into());
            let set = dataio::load_annotations(&ann)?;
            let (train, val) = dataio::split_dataset(&set, &spec)?;
            let train_path = out_dir.join(format!("{stem}_train.json"));
            let val_path = out_dir.join(format!("{stem}_val.json"));
            dataio::save_annotations(&train, &train_path)?;
            dataio::save_annotations(&val, &val_path)?;
            Ok(json!({
                "command": "split",
                "train_images": train.images.len(),
                "val_images": val.images.len(),
                "train": train_path,
                "val": val_path,
            }))
        }
        Command::Refine(a) => {
            apply_refine(&mut cfg.refine, &a.refine)?;
            let dets = existing(required(a.dets, &paths.dets, "dets")?, "detection file")?;
            let out = required(a.out, &None, "out")?;
            let (input, kept) = refine_stage(&dets, &out, &cfg.refine)?;
            Ok(json!({
                "command": "refine",
                "detections_in": input,
                "detections_out": kept,
                "out": out,
            }))
        }
        Command::Eval(a) => {
            let iou_match = a.iou_match.unwrap_or(cfg.eval.iou_match);
            let dets = existing(required(a.dets, &paths.dets, "dets")?, "detection file")?;
            let ann = existing(required(a.ann, &paths.ann, "ann")?, "annotation file")?;
            let report = eval_stage(&dets, &ann, iou_match, a.out.as_deref(), a.csv.as_deref())?;
            let mut summary = metrics_summary(&report);
            summary["command"] = json!("eval");
            Ok(summary)
        }
        Command::Render(a) => {
            let ann = existing(required(a.ann, &paths.ann, "ann")?, "annotation file")?;
            let images = existing(
                required(a.images, &paths.images, "images")?,
                "image directory",
            )?;
            let out = required(a.out, &paths.out, "out")?;
            let dets = a.dets.map(|p| existing(p, "detection file")).transpose()?;
            let count = render_stage(&ann, &images, &out, dets.as_deref())?;
            Ok(json!({"command": "render", "images": count, "out_dir": out}))
        }
        Command::Pipeline(a) => {
            apply_color(&mut cfg.color, &a.color)?;
            apply_refine(&mut cfg.refine, &a.refine)?;
            let iou_match = a.iou_match.unwrap_or(cfg.eval.iou_match);
            let ann = existing(required(a.ann, &paths.ann, "ann")?, "annotation file")?;
            let images = existing(
                required(a.images, &paths.images, "images")?,
                "image directory",
            )?;
            let dets = existing(required(a.dets, &paths.dets, "dets")?, "detection file")?;
            let out = required(a.out, &paths.out, "out")?;
            let pre_dir = out.join("preprocessed");
            let refined = out.join("refined.json");
            let metrics_json = out.join("metrics.json");
            let metrics_csv = out.join("metrics.csv");

            let pre = preprocess_stage(&images, &pre_dir, Some(&ann), &cfg.color)?;
            let (input, kept) = refine_stage(&dets, &refined, &cfg.refine)?;
            let report = eval_stage(
                &refined,
                &ann,
                iou_match,
                Some(&metrics_json),
                Some(&metrics_csv),
            )?;
            let mut summary = metrics_summary(&report);
            summary["command"] = json!("pipeline");
            summary["images"] = json!(pre.count);
            summary["detections_in"] = json!(input);
            summary["detections_out"] = json!(kept);
            summary["out_dir"] = json!(out);
            Ok(summary)
        }
    }
}

fn metrics_summary(r: &MetricsReport) -> Value {
    serde_json::to_value(r).expect("metrics serialize")
}

pub struct PreprocessOutcome {
    pub count: usize,
    pub annotations: Option<PathBuf>,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn png_name(file_name: &str) -> String {
    Path::new(file_name)
        .with_extension("png")
        .to_string_lossy()
        .into_owned()
}

/// Color-corrects images into `out` as PNG. With an annotation file only
/// its images are processed and a rewritten `annotations.json` is written.
pub fn preprocess_stage(
    images: &Path,
    out: &Path,
    ann: Option<&Path>,
    cfg: &ColorConstancyConfig,
) -> Result<PreprocessOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut set: Option<AnnotationSet> = ann.map(dataio::load_annotations).transpose()?;
    let names: Vec<String> = match &mut set {
        Some(set) => {
            set.sort_by_id();
            set.images.iter().map(|i| i.file_name.clone()).collect()
        }
        None => {
            let mut names = Vec::new();
            for entry in fs::read_dir(images).map_err(|e| Error::io(images, e))? {
                let entry = entry.map_err(|e| Error::io(images, e))?;
                let path = entry.path();
                let is_image = path
                    .extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
                if is_image && path.is_file() {
                    names.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
            names.sort();
            names
        }
    };
    let mut seen = std::collections::HashSet::new();
    for n in &names {
        if !seen.insert(png_name(n)) {
            return Err(Error::Validation(format!(
                "{n}: output name {} collides with another image",
                png_name(n)
            )));
        }
    }
    names.par_iter().try_for_each(|name| {
        let img = dataio::load_image(images.join(name))?;
        let corrected = shades_of_gray(&img, cfg)?;
        dataio::save_png(&corrected, out.join(png_name(name)))
    })?;
    info!("preprocessed {} images into {}", names.len(), out.display());
    let annotations = match set {
        Some(mut set) => {
            for img in &mut set.images {
                img.file_name = png_name(&img.file_name);
            }
            let path = out.join("annotations.json");
            dataio::save_annotations(&set, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(PreprocessOutcome {
        count: names.len(),
        annotations,
    })
}

/// Loads raw detections, refines them per image and saves the survivors.
/// Returns `(input count, output count)`.
pub fn refine_stage(dets: &Path, out: &Path, cfg: &RefineConfig) -> Result<(usize, usize)> {
    let raw = dataio::load_detections(dets)?;
    let input = raw.len();
    let refined = refine::refine(&group_by_image(raw), cfg)?;
    let kept = refine::flatten(&refined);
    dataio::save_detections(&kept, out)?;
    Ok((input, kept.len()))
}

pub fn eval_stage(
    dets: &Path,
    ann: &Path,
    iou_match: f64,
    json_out: Option<&Path>,
    csv_out: Option<&Path>,
) -> Result<MetricsReport> {
    let truth = dataio::load_annotations(ann)?;
    let dets = group_by_image(dataio::load_detections(dets)?);
    let report = eval::evaluate(&dets, &truth, iou_match)?;
    if let Some(p) = json_out {
        dataio::save_metrics_json(&report, p)?;
    }
    if let Some(p) = csv_out {
        dataio::save_metrics_csv(&report, p)?;
    }
    Ok(report)
}

/// Writes `<stem>_overlay.png` for every annotated image.
pub fn render_stage(ann: &Path, images: &Path, out: &Path, dets: Option<&Path>) -> Result<usize> {
    let mut set = dataio::load_annotations(ann)?;
    set.sort_by_id();
    let dets = match dets {
        Some(p) => group_by_image(dataio::load_detections(p)?),
        None => Default::default(),
    };
    let unknown: Vec<u64> = dets
        .keys()
        .copied()
        .filter(|id| set.image(*id).is_none())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownImageIds(unknown));
    }
    let gts = set.boxes_by_image();
    set.images.par_iter().try_for_each(|rec| {
        let img = dataio::load_image(images.join(&rec.file_name))?;
        if (img.width(), img.height()) != (rec.width, rec.height) {
            warn!(
                "image {}: file is {}x{}, annotations say {}x{}",
                rec.id,
                img.width(),
                img.height(),
                rec.width,
                rec.height
            );
        }
        let stem = Path::new(&rec.file_name).with_extension("");
        let name = format!("{}_overlay.png", stem.to_string_lossy());
        let image_dets = dets.get(&rec.id).map(Vec::as_slice).unwrap_or(&[]);
        dataio::render_overlay(&img, &gts[&rec.id], image_dets, out.join(name))
    })?;
    Ok(set.images.len())
}
