//! Line-oriented label files and the dataset directory layout.
//!
//! A label file holds one box per line, `class cx cy w h`, normalized to
//! the image; prediction files append a confidence column. The only class
//! is `0`. A dataset directory looks like:
//!
//! ```text
//! manifest.json          image sizes, operations applied, seed
//! labels/<image_id>.txt
//! images/<image_id>.png  optional pixels
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::augment::AugmentParams;
use super::boxes::{AnnotatedImage, BoundingBox};
use super::split::StrataBins;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const LABELS: &str = "labels";
pub const IMAGES: &str = "images";

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { file: file.to_path_buf(), line, msg: msg.into() }
}

/// Parses label text. `file` is only used in error messages.
pub fn parse_labels(text: &str, predictions: bool, file: &Path) -> Result<Vec<BoundingBox>> {
    let want = if predictions { 6 } else { 5 };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != want {
            return Err(parse_err(file, line_no, format!("expected {want} fields, found {}", fields.len())));
        }
        if fields[0] != "0" {
            return Err(parse_err(file, line_no, format!("unknown class {}", fields[0])));
        }
        let mut v = [0.0; 5];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| parse_err(file, line_no, format!("not a number: {f}")))?;
        }
        let mut b = BoundingBox { cx: v[0], cy: v[1], w: v[2], h: v[3], confidence: None };
        if predictions {
            b.confidence = Some(v[4]);
        }
        b.validate().map_err(|e| parse_err(file, line_no, e.to_string()))?;
        out.push(b);
    }
    Ok(out)
}

pub fn format_labels(boxes: &[BoundingBox]) -> String {
    boxes
        .iter()
        .map(|b| match b.confidence {
            Some(c) => format!("0 {} {} {} {} {}\n", b.cx, b.cy, b.w, b.h, c),
            None => format!("0 {} {} {} {}\n", b.cx, b.cy, b.w, b.h),
        })
        .collect()
}

/// All `*.txt` label files in `dir` (or `dir/labels` when present), keyed by
/// file stem.
pub fn read_label_dir(dir: &Path, predictions: bool) -> Result<BTreeMap<String, Vec<BoundingBox>>> {
    let nested = dir.join(LABELS);
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        let text = fs::read_to_string(&path)?;
        out.insert(stem.to_string(), parse_labels(&text, predictions, &path)?);
    }
    Ok(out)
}

/// One step of dataset preparation, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operation {
    Tile { grid: (u32, u32) },
    Negatives { emitted: usize, skipped: Vec<String> },
    Augment { copies: usize },
    Split { ratios: [f64; 3], bins: StrataBins, stratified: bool, warning: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// Image this one was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentParams>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ManifestEntry>,
    #[serde(default)]
    pub operations: Vec<Operation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A dataset held in memory; pixels are loaded when the PNG exists.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Vec<AnnotatedImage>,
    pub pixels: Vec<Option<image::RgbImage>>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        let mut images = Vec::with_capacity(manifest.images.len());
        let mut pixels = Vec::with_capacity(manifest.images.len());
        for e in &manifest.images {
            let label = dir.join(LABELS).join(format!("{}.txt", e.image_id));
            let boxes = match fs::read_to_string(&label) {
                Ok(text) => parse_labels(&text, false, &label)?,
                // Missing label file: a negative sample.
                Err(err) if err.kind() == std::io::ErrorKind::NotFound => vec![],
                Err(err) => return Err(err.into()),
            };
            images.push(AnnotatedImage::new(e.image_id.clone(), e.width_px, e.height_px, boxes));
            let png = image_path(dir, &e.image_id);
            pixels.push(if png.exists() { Some(image::open(&png)?.to_rgb8()) } else { None });
        }
        Ok(Dataset { manifest, images, pixels })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join(LABELS))?;
        for (img, px) in self.images.iter().zip(&self.pixels) {
            fs::write(dir.join(LABELS).join(format!("{}.txt", img.image_id)), format_labels(&img.ground_truth))?;
            if let Some(px) = px {
                fs::create_dir_all(dir.join(IMAGES))?;
                px.save(image_path(dir, &img.image_id))?;
            }
        }
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }
}

pub fn image_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(IMAGES).join(format!("{image_id}.png"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip() {
        let boxes = vec![BoundingBox::new(0.5, 0.25, 0.1, 0.2).unwrap().with_confidence(0.875)];
        let text = format_labels(&boxes);
        assert_eq!(text, "0 0.5 0.25 0.1 0.2 0.875\n");
        assert_eq!(parse_labels(&text, true, Path::new("p.txt")).unwrap(), boxes);
    }

    #[test]
    fn bad_lines_name_file_and_line() {
        let e = parse_labels("0 0.5 0.5 0.1 0.1\n0 0.5 x 0.1 0.1\n", false, Path::new("a.txt")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        assert!(e.to_string().starts_with("a.txt:2"));
        assert!(parse_labels("1 0.5 0.5 0.1 0.1", false, Path::new("a.txt")).is_err());
        assert!(parse_labels("0 0.5 0.5 0.1 0.1", true, Path::new("a.txt")).is_err());
        assert!(parse_labels("\n\n", false, Path::new("a.txt")).unwrap().is_empty());
    }
}
