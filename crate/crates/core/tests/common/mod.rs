//! Slow, obviously-correct reference implementations used as test oracles.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use agro::mission::MissionPlan;
use agro::nav::BendyConfig;
use agro::sensors::LidarScan;
use agro::world::{FieldMap, OccupancyGrid, RoverState, VehicleParams};
use agro::yieldkit::{BoundingBox, EvalConfig, Rect};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn orchard() -> FieldMap {
    FieldMap::load(fixture("orchard.json")).unwrap()
}

pub fn fixture_mission(name: &str) -> MissionPlan {
    MissionPlan::load(fixture(name), orchard().origin_geo.as_ref(), &VehicleParams::default()).unwrap()
}

pub fn orchard_start() -> RoverState {
    RoverState::at(3.0, 10.5, 0.0)
}

// ---- detection metrics ----

fn oracle_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax0, ax1) = (a.cx - a.w / 2.0, a.cx + a.w / 2.0);
    let (ay0, ay1) = (a.cy - a.h / 2.0, a.cy + a.h / 2.0);
    let (bx0, bx1) = (b.cx - b.w / 2.0, b.cx + b.w / 2.0);
    let (by0, by1) = (b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    let ix = f64::max(0.0, f64::min(ax1, bx1) - f64::max(ax0, bx0));
    let iy = f64::max(0.0, f64::min(ay1, by1) - f64::max(ay0, by0));
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)
}

/// Greedy matching by exhaustive scan: repeatedly take the highest-confidence
/// unprocessed prediction (earliest on ties), then scan every ground-truth
/// box for the best still-free one. Returns (tp, fn, fp, pairs).
pub fn oracle_match(pred: &[BoundingBox], gt: &[BoundingBox], cfg: &EvalConfig) -> (usize, usize, usize, Vec<(usize, usize)>) {
    let mut processed = vec![false; pred.len()];
    let mut gt_free = vec![true; gt.len()];
    let mut pairs = Vec::new();
    let mut fp = 0;
    loop {
        let mut pick: Option<usize> = None;
        for i in 0..pred.len() {
            let c = pred[i].confidence.unwrap_or(1.0);
            if processed[i] || c < cfg.confidence_threshold {
                continue;
            }
            match pick {
                None => pick = Some(i),
                Some(j) if c > pred[j].confidence.unwrap_or(1.0) => pick = Some(i),
                _ => {}
            }
        }
        let Some(i) = pick else { break };
        processed[i] = true;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..gt.len() {
            let v = oracle_iou(&pred[i], &gt[j]);
            if gt_free[j] && v >= cfg.iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, _)) => {
                gt_free[j] = false;
                pairs.push((i, j));
            }
            None => fp += 1,
        }
    }
    let missed = gt_free.iter().filter(|f| **f).count();
    (pairs.len(), missed, fp, pairs)
}

/// AP by explicit PR-point enumeration: one (recall, precision) point per
/// rank, then for every distinct recall level the best precision at that
/// recall or higher, integrated as a step function.
pub fn oracle_ap(ranked_tp: &[bool], total_gt: usize) -> f64 {
    let mut pts = Vec::new();
    let mut tp = 0;
    for (k, &hit) in ranked_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        pts.push((tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut levels: Vec<f64> = pts.iter().map(|p| p.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let p = pts.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

pub fn random_box<R: Rng>(rng: &mut R, coarse: bool) -> BoundingBox {
    // Coarse coordinates on a 0.05 lattice provoke exact IoU ties.
    let q = |v: f64| if coarse { (v * 20.0).round() / 20.0 } else { v };
    let w = q(rng.random_range(0.05..0.4)).max(0.05);
    let h = q(rng.random_range(0.05..0.4)).max(0.05);
    let x0 = q(rng.random_range(0.0..(1.0 - w)));
    let y0 = q(rng.random_range(0.0..(1.0 - h)));
    BoundingBox::from_corners(x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0)).unwrap()
}

/// Predictions that are jittered copies of ground truth or random strays.
pub fn random_case<R: Rng>(rng: &mut R, max_per_side: usize) -> (Vec<BoundingBox>, Vec<BoundingBox>) {
    let coarse = rng.random_bool(0.5);
    let gt: Vec<BoundingBox> = (0..rng.random_range(0..=max_per_side)).map(|_| random_box(rng, coarse)).collect();
    let levels = [0.1, 0.25, 0.3, 0.5, 0.5, 0.7, 0.9, 1.0];
    let pred = (0..rng.random_range(0..=max_per_side))
        .map(|_| {
            let b = if !gt.is_empty() && rng.random_bool(0.7) {
                let g = gt[rng.random_range(0..gt.len())];
                let [x0, y0, x1, y1] = g.corners();
                let j = if coarse { 0.05 } else { 0.02 };
                let dx = rng.random_range(-1..=1) as f64 * j;
                let dy = rng.random_range(-1..=1) as f64 * j;
                BoundingBox::from_corners((x0 + dx).max(0.0), (y0 + dy).max(0.0), (x1 + dx).min(1.0), (y1 + dy).min(1.0))
                    .unwrap_or(g)
            } else {
                random_box(rng, coarse)
            };
            b.with_confidence(levels[rng.random_range(0..levels.len())])
        })
        .collect();
    (pred, gt)
}

// ---- geometry ----

/// Exhaustive search over every rectangle with edges on obstacle
/// coordinates.
pub fn brute_force_empty_area(width: f64, height: f64, obstacles: &[Rect]) -> f64 {
    let mut xs: Vec<f64> = vec![0.0, width];
    let mut ys: Vec<f64> = vec![0.0, height];
    for o in obstacles {
        xs.extend([o.x0.clamp(0.0, width), o.x1.clamp(0.0, width)]);
        ys.extend([o.y0.clamp(0.0, height), o.y1.clamp(0.0, height)]);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut best = 0.0f64;
    for (i, &x0) in xs.iter().enumerate() {
        for &x1 in &xs[i + 1..] {
            for (k, &y0) in ys.iter().enumerate() {
                for &y1 in &ys[k + 1..] {
                    let hit = obstacles.iter().any(|o| x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1);
                    if !hit {
                        best = best.max((x1 - x0) * (y1 - y0));
                    }
                }
            }
        }
    }
    best
}

// ---- planning ----

/// Uniform-cost shortest distance by Bellman-Ford relaxation over the full
/// 8-connected move set (no corner cutting). `None` when unreachable.
pub fn oracle_shortest(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Option<f64> {
    let (rows, cols) = (grid.rows, grid.cols);
    let free = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && grid.is_free(agro::world::Cell::new(r as usize, c as usize));
    let mut dist = vec![f64::INFINITY; rows * cols];
    dist[start.0 * cols + start.1] = 0.0;
    for _ in 0..rows * cols {
        let mut changed = false;
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                let d = dist[r as usize * cols + c as usize];
                if !d.is_finite() || !free(r, c) {
                    continue;
                }
                for dr in -1..=1isize {
                    for dc in -1..=1isize {
                        if (dr, dc) == (0, 0) || !free(r + dr, c + dc) {
                            continue;
                        }
                        let diag = dr != 0 && dc != 0;
                        if diag && (!free(r + dr, c) || !free(r, c + dc)) {
                            continue;
                        }
                        let step = if diag { std::f64::consts::SQRT_2 } else { 1.0 } * grid.cell_size_m;
                        let k = (r + dr) as usize * cols + (c + dc) as usize;
                        if d + step < dist[k] - 1e-12 {
                            dist[k] = d + step;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let d = dist[goal.0 * cols + goal.1];
    d.is_finite().then_some(d)
}

// ---- avoidance ----

pub enum ProbeVerdict {
    Clear,
    Blocked,
    /// Some point sits within 1e-9 m of the margin; either answer is fair.
    Borderline,
}

fn seg_dist(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (vx, vy) = (bx - ax, by - ay);
    let t = (((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    (px - ax - t * vx).hypot(py - ay - t * vy)
}

/// Brute-force candidate scoring: every candidate bearing is scored by its
/// worst clearance against the forward scan points; the smallest-deviation
/// clear one wins, rightward first. `None` means nothing is clear.
/// `ambiguous` is set when a borderline probe could have changed the answer.
pub fn oracle_bendy(pose: &RoverState, target: (f64, f64), scan: &LidarScan, cfg: &BendyConfig) -> (Option<f64>, bool) {
    let pts: Vec<(f64, f64)> = scan
        .beams
        .iter()
        .filter_map(|b| b.range.map(|r| (pose.x + r * (pose.heading + b.bearing).cos(), pose.y + r * (pose.heading + b.bearing).sin())))
        .collect();
    let direct = (target.1 - pose.y).atan2(target.0 - pose.x);
    let steps = ((cfg.max_deviation_deg + 1e-9) / cfg.step_deg).floor() as i64;
    let mut order = vec![0i64];
    for k in 1..=steps {
        order.extend([-k, k]);
    }
    let mut ambiguous = false;
    for k in order {
        let dev = (k as f64 * cfg.step_deg).to_radians();
        let bearing = agro::world::wrap_angle(direct + dev);
        let (ex, ey) = (pose.x + cfg.lookahead_m * bearing.cos(), pose.y + cfg.lookahead_m * bearing.sin());
        let mut verdict = ProbeVerdict::Clear;
        for &(px, py) in &pts {
            let ahead = (px - pose.x) * bearing.cos() + (py - pose.y) * bearing.sin();
            if ahead <= 0.0 {
                continue;
            }
            let d = seg_dist(px, py, pose.x, pose.y, ex, ey);
            if (d - cfg.margin_m).abs() < 1e-9 {
                verdict = ProbeVerdict::Borderline;
            } else if d < cfg.margin_m {
                verdict = ProbeVerdict::Blocked;
                break;
            }
        }
        match verdict {
            ProbeVerdict::Clear => return (Some(bearing), ambiguous),
            ProbeVerdict::Borderline => ambiguous = true,
            ProbeVerdict::Blocked => {}
        }
    }
    (None, ambiguous)
}
