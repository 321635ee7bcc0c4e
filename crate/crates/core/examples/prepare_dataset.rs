//! Build a small synthetic dataset on disk, then tile it, add negative
//! crops, augment and split it.
//!
//! ```text
//! cargo run --example prepare_dataset [OUT_DIR]
//! ```

use agro::yieldkit::io::{Dataset, Manifest, ManifestEntry};
use agro::yieldkit::prep::{prepare, PrepOptions};
use agro::yieldkit::{AnnotatedImage, BoundingBox};
use image::{Rgb, RgbImage};
use rand::Rng;

fn main() -> agro::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("agro-prepared"));
    let mut rng = agro::rng::substream(3, "example");

    // Twenty 480x360 "canopy" images with a handful of red fruit each.
    let mut ds = Dataset::default();
    for i in 0..20 {
        let (w, h) = (480, 360);
        let mut px = RgbImage::from_pixel(w, h, Rgb([40, 110, 45]));
        let mut boxes = vec![];
        for _ in 0..rng.random_range(1..6) {
            let (cx, cy) = (rng.random_range(0.05..0.35), rng.random_range(0.1..0.9));
            let b = BoundingBox::new(cx, cy, 0.05, 0.06)?;
            let [x0, y0, x1, y1] = b.to_pixels(w, h);
            for y in y0 as u32..y1 as u32 {
                for x in x0 as u32..x1 as u32 {
                    px.put_pixel(x, y, Rgb([200, 30, 30]));
                }
            }
            boxes.push(b);
        }
        let id = format!("canopy{i:02}");
        ds.manifest.images.push(ManifestEntry { image_id: id.clone(), width_px: w, height_px: h, split: None, source: None, augment: None });
        ds.images.push(AnnotatedImage::new(id, w, h, boxes));
        ds.pixels.push(Some(px));
    }
    ds.manifest = Manifest { seed: Some(3), ..ds.manifest };

    let opts = PrepOptions { tile: Some((2, 2)), negatives: true, augment_copies: 1, seed: 3, ..PrepOptions::default() };
    let prepared = prepare(ds, &opts)?;
    prepared.write(&out)?;

    let count = |s: &str| prepared.manifest.images.iter().filter(|e| e.split.as_deref() == Some(s)).count();
    let negatives = prepared.images.iter().filter(|i| i.is_negative()).count();
    println!("{} images ({negatives} without fruit) written to {}", prepared.images.len(), out.display());
    println!("train {}  val {}  test {}", count("train"), count("val"), count("test"));
    for op in &prepared.manifest.operations {
        println!("  {}", serde_json::to_string(op)?);
    }
    Ok(())
}
