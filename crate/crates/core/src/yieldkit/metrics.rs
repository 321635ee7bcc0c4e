use serde::{Deserialize, Serialize};

use super::boxes::{iou, BoundingBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub confidence_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { confidence_threshold: 0.25, iou_threshold: 0.70 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("confidence_threshold", self.confidence_threshold), ("iou_threshold", self.iou_threshold)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn map_iou_grid() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// True negatives are never counted for detection; `tn` is always zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
}

impl ConfusionMatrix {
    pub fn new(tp: usize, fn_: usize, fp: usize) -> Self {
        ConfusionMatrix { tp, fn_, fp }
    }

    pub fn tn(&self) -> usize {
        0
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.fp += other.fp;
    }
}

/// `100·(tp + tn) / (tp + fn + fp + tn)`.
pub fn accuracy(m: &ConfusionMatrix) -> Result<f64> {
    let total = m.tp + m.fn_ + m.fp + m.tn();
    if total == 0 {
        return Err(Error::Undefined("accuracy of an empty confusion matrix".into()));
    }
    Ok(100.0 * (m.tp + m.tn()) as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub confusion: ConfusionMatrix,
    pub matches: Vec<Match>,
    /// Surviving predictions left unmatched, by input index.
    pub false_positives: Vec<usize>,
    /// Ground-truth boxes left unmatched, by input index.
    pub missed: Vec<usize>,
}

/// Indices sorted by descending score; ties keep input order.
fn ranked(preds: &[BoundingBox]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| preds[b].score().total_cmp(&preds[a].score()));
    idx
}

/// Unmatched ground truth with the highest IoU at or above `thr`; ties go to
/// the lower index.
fn best_gt(p: &BoundingBox, gt: &[BoundingBox], taken: &[bool], thr: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, g) in gt.iter().enumerate() {
        if taken[j] {
            continue;
        }
        let v = iou(p, g);
        if v >= thr && best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best
}

/// Greedy confidence-ordered matching. Predictions below the confidence
/// threshold are dropped before anything else.
pub fn match_detections(pred: &[BoundingBox], gt: &[BoundingBox], cfg: &EvalConfig) -> MatchResult {
    let mut taken = vec![false; gt.len()];
    let mut matches = Vec::new();
    let mut false_positives = Vec::new();
    for i in ranked(pred) {
        if pred[i].score() < cfg.confidence_threshold {
            continue;
        }
        match best_gt(&pred[i], gt, &taken, cfg.iou_threshold) {
            Some((j, v)) => {
                taken[j] = true;
                matches.push(Match { pred: i, gt: j, iou: v });
            }
            None => false_positives.push(i),
        }
    }
    let missed: Vec<usize> = (0..gt.len()).filter(|&j| !taken[j]).collect();
    let confusion = ConfusionMatrix::new(matches.len(), missed.len(), false_positives.len());
    MatchResult { confusion, matches, false_positives, missed }
}

/// One ranked detection in the global precision-recall sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedHit {
    pub image: usize,
    pub pred: usize,
    pub score: f64,
    pub tp: bool,
}

/// Ranks every prediction across all images (no confidence threshold) and
/// marks each as a hit or miss at `iou_thr`. Ties rank by image, then
/// input order.
pub fn ranked_hits(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>], iou_thr: f64) -> Vec<RankedHit> {
    let mut all: Vec<(usize, usize)> = pred.iter().enumerate().flat_map(|(i, ps)| (0..ps.len()).map(move |j| (i, j))).collect();
    all.sort_by(|a, b| pred[b.0][b.1].score().total_cmp(&pred[a.0][a.1].score()));
    let mut taken: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let empty = Vec::new();
    all.into_iter()
        .map(|(i, j)| {
            let p = &pred[i][j];
            let g = gt.get(i).unwrap_or(&empty);
            let tp = match best_gt(p, g, taken.get(i).map_or(&[][..], |t| t.as_slice()), iou_thr) {
                Some((k, _)) => {
                    taken[i][k] = true;
                    true
                }
                None => false,
            };
            RankedHit { image: i, pred: j, score: p.score(), tp }
        })
        .collect()
}

/// Area under the all-point interpolated precision-recall curve.
pub fn ap_from_hits(hits: &[RankedHit], total_gt: usize) -> Result<f64> {
    if total_gt == 0 {
        return Err(Error::Undefined("average precision with no ground truth".into()));
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, h) in hits.iter().enumerate() {
        tp += h.tp as usize;
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // Precision envelope: best precision at this recall or beyond.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    // Recall steps by exactly 1/total_gt at each hit.
    let sum: f64 = hits.iter().zip(&precision).filter(|(h, _)| h.tp).map(|(_, p)| p).sum();
    let ap = sum / total_gt as f64;
    Ok(ap)
}

pub fn average_precision(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>], iou_thr: f64) -> Result<f64> {
    let total: usize = gt.iter().map(Vec::len).sum();
    ap_from_hits(&ranked_hits(pred, gt, iou_thr), total)
}

/// Mean AP over the 0.50:0.05:0.95 IoU grid.
pub fn map_range(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> Result<f64> {
    let grid = map_iou_grid();
    let mut sum = 0.0;
    for thr in grid {
        sum += average_precision(pred, gt, thr)?;
    }
    Ok(sum / grid.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, s: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, s, s).unwrap()
    }

    #[test]
    fn paper_accuracy() {
        let a = accuracy(&ConfusionMatrix::new(2137, 213, 42)).unwrap();
        assert!((a - 89.34).abs() < 0.005, "{a}");
        assert_eq!(accuracy(&ConfusionMatrix::new(10, 0, 0)).unwrap(), 100.0);
        assert_eq!(accuracy(&ConfusionMatrix::new(0, 5, 5)).unwrap(), 0.0);
        assert!(matches!(accuracy(&ConfusionMatrix::default()), Err(Error::Undefined(_))));
    }

    #[test]
    fn trivial_matches() {
        let cfg = EvalConfig::default();
        assert_eq!(match_detections(&[], &[], &cfg).confusion, ConfusionMatrix::default());
        let g = b(0.5, 0.5, 0.1);
        let r = match_detections(&[g.with_confidence(0.9)], &[g], &cfg);
        assert_eq!(r.confusion, ConfusionMatrix::new(1, 0, 0));
        // Below the confidence threshold: dropped, not a false positive.
        let r = match_detections(&[g.with_confidence(0.1)], &[g], &cfg);
        assert_eq!(r.confusion, ConfusionMatrix::new(0, 1, 0));
    }

    #[test]
    fn higher_confidence_claims_first() {
        let g = b(0.5, 0.5, 0.2);
        let p_lo = b(0.5, 0.5, 0.2).with_confidence(0.5);
        let p_hi = b(0.51, 0.5, 0.2).with_confidence(0.9);
        let r = match_detections(&[p_lo, p_hi], &[g], &EvalConfig::default());
        assert_eq!(r.matches, vec![Match { pred: 1, gt: 0, iou: iou(&p_hi, &g) }]);
        assert_eq!(r.false_positives, vec![0]);
    }

    #[test]
    fn ap_hand_case() {
        // Ranked: TP, FP, TP with 2 gt -> recall 0.5, 0.5, 1.0; precision 1, 0.5, 2/3.
        let gt = vec![vec![b(0.2, 0.2, 0.1), b(0.7, 0.7, 0.1)]];
        let pred = vec![vec![
            b(0.2, 0.2, 0.1).with_confidence(0.9),
            b(0.45, 0.45, 0.1).with_confidence(0.8),
            b(0.7, 0.7, 0.1).with_confidence(0.7),
        ]];
        let ap = average_precision(&pred, &gt, 0.5).unwrap();
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn ap_edges() {
        let gt = vec![vec![b(0.2, 0.2, 0.1)]];
        assert_eq!(average_precision(&[vec![]], &gt, 0.5).unwrap(), 0.0);
        assert!(average_precision(&[vec![]], &[vec![]], 0.5).is_err());
        let perfect = vec![vec![gt[0][0].with_confidence(0.3)]];
        assert_eq!(map_range(&perfect, &gt).unwrap(), 1.0);
    }

    #[test]
    fn grid_values() {
        let g = map_iou_grid();
        assert_eq!(g[0], 0.5);
        assert_eq!(g[9], 0.95);
    }
}
