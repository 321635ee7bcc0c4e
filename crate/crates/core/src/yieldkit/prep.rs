use image::imageops;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentParams};
use super::io::{Dataset, ManifestEntry, Operation};
use super::split::{stratified_split, StrataBins, DEFAULT_RATIOS};
use super::tiling::{negative_crop, tile_image};
use crate::error::{Error, Result};
use crate::rng;

/// Which preparation steps to run. They always run in the order
/// tile → negatives → augment → split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepOptions {
    pub tile: Option<(u32, u32)>,
    pub negatives: bool,
    /// Augmented copies per image; zero disables augmentation.
    pub augment_copies: usize,
    pub split: Option<([f64; 3], StrataBins)>,
    pub seed: u64,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions { tile: None, negatives: false, augment_copies: 0, split: Some((DEFAULT_RATIOS, StrataBins::default())), seed: 0 }
    }
}

fn entry(id: &str, w: u32, h: u32, source: &str) -> ManifestEntry {
    ManifestEntry { image_id: id.into(), width_px: w, height_px: h, split: None, source: Some(source.into()), augment: None }
}

fn check_pixels(ds: &Dataset) -> Result<()> {
    for (img, px) in ds.images.iter().zip(&ds.pixels) {
        if let Some(px) = px {
            if px.dimensions() != (img.width_px, img.height_px) {
                return Err(Error::param(format!(
                    "{}: manifest says {}x{}, image is {}x{}",
                    img.image_id,
                    img.width_px,
                    img.height_px,
                    px.width(),
                    px.height()
                )));
            }
        }
    }
    Ok(())
}

fn tile_step(ds: Dataset, grid: (u32, u32)) -> Result<Dataset> {
    let mut out = Dataset { manifest: ds.manifest.clone(), ..Default::default() };
    out.manifest.images.clear();
    for (img, px) in ds.images.iter().zip(&ds.pixels) {
        for (t, tiled) in tile_image(img, grid)? {
            out.manifest.images.push(entry(&tiled.image_id, t.width, t.height, &img.image_id));
            out.pixels.push(px.as_ref().map(|p| imageops::crop_imm(p, t.x, t.y, t.width, t.height).to_image()));
            out.images.push(tiled);
        }
    }
    out.manifest.operations.push(Operation::Tile { grid });
    Ok(out)
}

fn negatives_step(mut ds: Dataset) -> Result<Dataset> {
    let mut skipped = Vec::new();
    let mut emitted = 0;
    for i in 0..ds.images.len() {
        if ds.images[i].is_negative() {
            continue;
        }
        match negative_crop(&ds.images[i]) {
            Ok(((x, y, w, h), neg)) => {
                let px = ds.pixels[i].as_ref().map(|p| imageops::crop_imm(p, x, y, w, h).to_image());
                ds.manifest.images.push(entry(&neg.image_id, w, h, &ds.images[i].image_id));
                ds.images.push(neg);
                ds.pixels.push(px);
                emitted += 1;
            }
            Err(Error::EmptyResult) => skipped.push(ds.images[i].image_id.clone()),
            Err(e) => return Err(e),
        }
    }
    ds.manifest.operations.push(Operation::Negatives { emitted, skipped });
    Ok(ds)
}

fn augment_step(mut ds: Dataset, copies: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng::substream(seed, rng::AUGMENT);
    let n = ds.images.len();
    for i in 0..n {
        for k in 1..=copies {
            let params = AugmentParams::sample(&mut rng);
            let src = &ds.images[i];
            let mut copy = src.clone();
            copy.image_id = format!("{}_aug{k}", src.image_id);
            let px = match &ds.pixels[i] {
                Some(p) => Some(augment(p, &params, &mut rng)?),
                None => None,
            };
            let mut e = entry(&copy.image_id, copy.width_px, copy.height_px, &src.image_id);
            e.augment = Some(params);
            ds.manifest.images.push(e);
            ds.images.push(copy);
            ds.pixels.push(px);
        }
    }
    ds.manifest.operations.push(Operation::Augment { copies });
    Ok(ds)
}

fn split_step(mut ds: Dataset, ratios: [f64; 3], bins: StrataBins, seed: u64) -> Result<Dataset> {
    let mut rng = rng::substream(seed, rng::SPLIT);
    let s = stratified_split(&ds.images, ratios, &bins, &mut rng)?;
    for (name, part) in ["train", "val", "test"].into_iter().zip(s.parts()) {
        for &i in part {
            ds.manifest.images[i].split = Some(name.into());
        }
    }
    ds.manifest.operations.push(Operation::Split { ratios, bins, stratified: s.stratified, warning: s.warning });
    Ok(ds)
}

/// Runs the requested steps. Every derived image records its source, and
/// the manifest records each step and the seed.
pub fn prepare(ds: Dataset, opts: &PrepOptions) -> Result<Dataset> {
    check_pixels(&ds)?;
    let mut ds = ds;
    if let Some(grid) = opts.tile {
        ds = tile_step(ds, grid)?;
    }
    if opts.negatives {
        ds = negatives_step(ds)?;
    }
    if opts.augment_copies > 0 {
        ds = augment_step(ds, opts.augment_copies, opts.seed)?;
    }
    if let Some((ratios, bins)) = &opts.split {
        ds = split_step(ds, *ratios, bins.clone(), opts.seed)?;
    }
    ds.manifest.seed = Some(opts.seed);
    Ok(ds)
}
