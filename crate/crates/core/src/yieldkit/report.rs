use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::boxes::BoundingBox;
use super::metrics::{accuracy, average_precision, map_range, match_detections, ConfusionMatrix, EvalConfig};
use crate::error::Result;
use crate::mission::{feature_collection, geotag_feature, GeotagRecord};
use crate::world::GeoAnchor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub image_id: String,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub confusion: ConfusionMatrix,
    /// Absent when the confusion matrix is empty.
    pub accuracy_pct: Option<f64>,
    /// Absent when there is no ground truth.
    pub ap50: Option<f64>,
    pub map50_95: Option<f64>,
    pub per_image: Vec<ImageEval>,
    /// Prediction files with no ground truth counterpart; ignored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unmatched_predictions: Vec<String>,
}

/// Scores predictions against ground truth, image by image in id order.
/// Ground-truth images without predictions count as all misses.
pub fn evaluate(
    gt: &BTreeMap<String, Vec<BoundingBox>>,
    pred: &BTreeMap<String, Vec<BoundingBox>>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let empty = Vec::new();
    let mut confusion = ConfusionMatrix::default();
    let mut per_image = Vec::with_capacity(gt.len());
    let mut gts = Vec::with_capacity(gt.len());
    let mut preds = Vec::with_capacity(gt.len());
    for (id, g) in gt {
        let p = pred.get(id).unwrap_or(&empty);
        let m = match_detections(p, g, cfg).confusion;
        confusion.add(&m);
        per_image.push(ImageEval { image_id: id.clone(), tp: m.tp, fn_: m.fn_, fp: m.fp });
        gts.push(g.clone());
        preds.push(p.clone());
    }
    Ok(EvalReport {
        config: cfg.clone(),
        confusion,
        accuracy_pct: accuracy(&confusion).ok(),
        ap50: average_precision(&preds, &gts, 0.5).ok(),
        map50_95: map_range(&preds, &gts).ok(),
        per_image,
        unmatched_predictions: pred.keys().filter(|k| !gt.contains_key(*k)).cloned().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldEntry {
    pub record: GeotagRecord,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldReport {
    pub entries: Vec<YieldEntry>,
    pub total: usize,
    /// Detection image ids with no geotag record.
    pub skipped: Vec<String>,
}

impl YieldReport {
    /// Geotag feature collection with a `count` property on every point.
    pub fn to_geojson(&self, anchor: Option<&GeoAnchor>) -> Result<Value> {
        let features = self
            .entries
            .iter()
            .map(|e| {
                let mut f = geotag_feature(&e.record, anchor)?;
                f["properties"]["count"] = e.count.into();
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(feature_collection(features))
    }
}

/// Counts confident detections per geotagged image.
pub fn yield_count(detections: &[(String, Vec<BoundingBox>)], cfg: &EvalConfig, geotags: &[GeotagRecord]) -> YieldReport {
    let by_id: BTreeMap<&str, &GeotagRecord> = geotags.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (id, boxes) in detections {
        let count = boxes.iter().filter(|b| b.score() >= cfg.confidence_threshold).count();
        match by_id.get(id.as_str()) {
            Some(r) => entries.push(YieldEntry { record: (*r).clone(), count }),
            None => skipped.push(id.clone()),
        }
    }
    let total = entries.iter().map(|e| e.count).sum();
    YieldReport { entries, total, skipped }
}
