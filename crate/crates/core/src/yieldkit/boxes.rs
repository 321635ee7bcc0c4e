use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for boxes that touch the image border after float round trips.
const EDGE_EPS: f64 = 1e-9;

/// Single-class (pistachio) box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Present on predictions only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { cx, cy, w, h, confidence: None };
        b.validate()?;
        Ok(b)
    }

    /// Box from corner coordinates, still normalized.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn with_confidence(mut self, c: f64) -> Self {
        self.confidence = Some(c);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.corners();
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::param(format!("box size must be positive, got {}x{}", self.w, self.h)));
        }
        if !(x0 >= -EDGE_EPS && y0 >= -EDGE_EPS && x1 <= 1.0 + EDGE_EPS && y1 <= 1.0 + EDGE_EPS) {
            return Err(Error::param("box extends outside the image"));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::param(format!("confidence {c} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// `[x0, y0, x1, y1]`.
    pub fn corners(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Missing confidences rank as certain.
    pub fn score(&self) -> f64 {
        self.confidence.unwrap_or(1.0)
    }

    /// Corners in pixels for a `width`×`height` image.
    pub fn to_pixels(&self, width: u32, height: u32) -> [f64; 4] {
        let [x0, y0, x1, y1] = self.corners();
        let (w, h) = (width as f64, height as f64);
        [(x0 * w).max(0.0), (y0 * h).max(0.0), (x1 * w).min(w), (y1 * h).min(h)]
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    // Areas from the same corners as the intersection, so iou(a, a) is exactly 1.
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// An image and its ground truth; no boxes means a negative sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default)]
    pub ground_truth: Vec<BoundingBox>,
}

impl AnnotatedImage {
    pub fn new(image_id: impl Into<String>, width_px: u32, height_px: u32, ground_truth: Vec<BoundingBox>) -> Self {
        AnnotatedImage { image_id: image_id.into(), width_px, height_px, ground_truth }
    }

    pub fn is_negative(&self) -> bool {
        self.ground_truth.is_empty()
    }
}
