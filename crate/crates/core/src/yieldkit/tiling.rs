use serde::{Deserialize, Serialize};

use super::boxes::{AnnotatedImage, BoundingBox};
use crate::error::{Error, Result};

/// Upload limit per tile, in pixels.
pub const MAX_TILE_PX: u64 = 12_000_000;
pub const DEFAULT_GRID: (u32, u32) = (3, 2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub col: u32,
    pub row: u32,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Tile {
    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

fn edges(len: u32, parts: u32) -> Vec<u32> {
    (0..=parts).map(|i| (i as u64 * len as u64 / parts as u64) as u32).collect()
}

/// Near-equal integer partition into `cols`×`rows` tiles, row-major.
///
/// Edges sit at `floor(i·len/parts)`, so the extra pixels of an uneven
/// split land in the later columns and rows.
pub fn split_tiles(width_px: u32, height_px: u32, grid: (u32, u32)) -> Result<Vec<Tile>> {
    let (cols, rows) = grid;
    if cols == 0 || rows == 0 {
        return Err(Error::param(format!("grid {cols}x{rows} has no tiles")));
    }
    if width_px < cols.max(6) || height_px < rows.max(6) {
        return Err(Error::param(format!("{width_px}x{height_px} image is too small for a {cols}x{rows} grid")));
    }
    let xs = edges(width_px, cols);
    let ys = edges(height_px, rows);
    let mut tiles = Vec::with_capacity((cols * rows) as usize);
    for row in 0..rows {
        for col in 0..cols {
            let (r, c) = (row as usize, col as usize);
            tiles.push(Tile { col, row, x: xs[c], y: ys[r], width: xs[c + 1] - xs[c], height: ys[r + 1] - ys[r] });
        }
    }
    if let Some(big) = tiles.iter().find(|t| t.area() > MAX_TILE_PX) {
        return Err(Error::param(format!("tile {}x{} exceeds {MAX_TILE_PX} px", big.width, big.height)));
    }
    Ok(tiles)
}

/// Ground-truth boxes clipped to `tile` and renormalized to its frame.
/// Boxes that only touch the tile edge are dropped.
pub fn remap_to_tile(image: &AnnotatedImage, tile: &Tile) -> Vec<BoundingBox> {
    let (tx0, ty0) = (tile.x as f64, tile.y as f64);
    let (tx1, ty1) = (tx0 + tile.width as f64, ty0 + tile.height as f64);
    let (tw, th) = (tile.width as f64, tile.height as f64);
    image
        .ground_truth
        .iter()
        .filter_map(|b| {
            let [x0, y0, x1, y1] = b.to_pixels(image.width_px, image.height_px);
            let (cx0, cy0, cx1, cy1) = (x0.max(tx0), y0.max(ty0), x1.min(tx1), y1.min(ty1));
            if cx1 <= cx0 || cy1 <= cy0 {
                return None;
            }
            let (nx0, ny0) = ((cx0 - tx0) / tw, (cy0 - ty0) / th);
            let (nx1, ny1) = (((cx1 - tx0) / tw).min(1.0), ((cy1 - ty0) / th).min(1.0));
            let mut out = BoundingBox::from_corners(nx0, ny0, nx1, ny1).ok()?;
            out.confidence = b.confidence;
            Some(out)
        })
        .collect()
}

pub fn tile_id(image_id: &str, tile: &Tile) -> String {
    format!("{image_id}_r{}c{}", tile.row, tile.col)
}

/// Splits an annotated image into tiles with remapped annotations.
pub fn tile_image(image: &AnnotatedImage, grid: (u32, u32)) -> Result<Vec<(Tile, AnnotatedImage)>> {
    Ok(split_tiles(image.width_px, image.height_px, grid)?
        .into_iter()
        .map(|t| {
            let boxes = remap_to_tile(image, &t);
            (t, AnnotatedImage::new(tile_id(&image.image_id, &t), t.width, t.height, boxes))
        })
        .collect())
}

/// Axis-aligned rectangle in pixel coordinates; edges may be fractional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// True when the open interiors overlap.
    pub fn overlaps(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    /// Largest whole-pixel rectangle inside this one: `(x, y, w, h)`.
    pub fn inner_pixels(&self) -> (u32, u32, u32, u32) {
        let (x0, y0) = (self.x0.ceil().max(0.0) as u32, self.y0.ceil().max(0.0) as u32);
        let (x1, y1) = (self.x1.floor().max(0.0) as u32, self.y1.floor().max(0.0) as u32);
        (x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }
}

fn coords(limit: f64, vals: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = vals.map(|c| c.clamp(0.0, limit)).chain([0.0, limit]).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Prefers larger area, then the smaller top edge, then the smaller left
/// edge, then the narrower rectangle.
fn better(a: &Rect, b: &Rect) -> bool {
    let (aa, ba) = (a.area(), b.area());
    if aa != ba {
        return aa > ba;
    }
    (a.y0, a.x0, a.x1 - a.x0) < (b.y0, b.x0, b.x1 - b.x0)
}

/// Maximum-area rectangle inside `width`×`height` that overlaps no
/// obstacle interior.
///
/// Works on the grid of obstacle edge coordinates: every maximal empty
/// rectangle has its edges there. Each grid row is the base of a
/// histogram whose bars are free-run lengths, and the stack method finds
/// every maximal rectangle resting on it.
pub fn largest_empty_rect_in(width: f64, height: f64, obstacles: &[Rect]) -> Result<Rect> {
    let xs = coords(width, obstacles.iter().flat_map(|o| [o.x0, o.x1]));
    let ys = coords(height, obstacles.iter().flat_map(|o| [o.y0, o.y1]));
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);
    let blocked = |r: usize, c: usize| {
        let cell = Rect { x0: xs[c], y0: ys[r], x1: xs[c + 1], y1: ys[r + 1] };
        obstacles.iter().any(|o| o.overlaps(&cell))
    };
    // top[c]: first row of the free run in column c ending at the current row.
    let mut top = vec![0usize; nx];
    let mut best: Option<Rect> = None;
    let mut left = vec![0usize; nx];
    let mut right = vec![0usize; nx];
    let mut stack: Vec<usize> = Vec::with_capacity(nx);
    for r in 0..ny {
        for (c, t) in top.iter_mut().enumerate() {
            if blocked(r, c) {
                *t = r + 1;
            }
        }
        // Bars extend over neighbors at least as tall (top index no larger).
        stack.clear();
        for c in 0..nx {
            while stack.last().is_some_and(|&k| top[k] <= top[c]) {
                stack.pop();
            }
            left[c] = stack.last().map_or(0, |&k| k + 1);
            stack.push(c);
        }
        stack.clear();
        for c in (0..nx).rev() {
            while stack.last().is_some_and(|&k| top[k] <= top[c]) {
                stack.pop();
            }
            right[c] = stack.last().map_or(nx, |&k| k);
            stack.push(c);
        }
        for c in 0..nx {
            if top[c] > r {
                continue;
            }
            let cand = Rect { x0: xs[left[c]], y0: ys[top[c]], x1: xs[right[c]], y1: ys[r + 1] };
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
    }
    best.filter(|b| b.area() > 0.0).ok_or(Error::EmptyResult)
}

pub fn box_rects(image: &AnnotatedImage) -> Vec<Rect> {
    image
        .ground_truth
        .iter()
        .map(|b| {
            let [x0, y0, x1, y1] = b.to_pixels(image.width_px, image.height_px);
            Rect { x0, y0, x1, y1 }
        })
        .collect()
}

/// Largest region of `image` free of ground truth, in pixels.
pub fn largest_empty_rect(image: &AnnotatedImage) -> Result<Rect> {
    largest_empty_rect_in(image.width_px as f64, image.height_px as f64, &box_rects(image))
}

/// Whole-pixel negative crop `(x, y, w, h)` and its empty annotation.
pub fn negative_crop(image: &AnnotatedImage) -> Result<((u32, u32, u32, u32), AnnotatedImage)> {
    let (x, y, w, h) = largest_empty_rect(image)?.inner_pixels();
    if w == 0 || h == 0 {
        return Err(Error::EmptyResult);
    }
    Ok(((x, y, w, h), AnnotatedImage::new(format!("{}_neg", image.image_id), w, h, vec![])))
}
