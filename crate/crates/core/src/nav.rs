//! Global grid planning, reactive avoidance and heading control.
//!
//! Dijkstra runs over the inflated static map between mission waypoints.
//! BendyRuler runs every control tick on the live LiDAR scan and bends the
//! commanded bearing around anything the map did not know about.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensors::LidarScan;
use crate::world::{wrap_angle, Cell, OccupancyGrid, RoverState, VehicleParams};

/// Path cost as a count of straight and diagonal steps.
///
/// Ordering compares `straight + diagonal·√2` exactly in integer arithmetic,
/// so equal-cost paths compare equal regardless of summation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StepCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl StepCost {
    pub fn meters(&self, cell_size_m: f64) -> f64 {
        (self.straight as f64 + self.diagonal as f64 * SQRT_2) * cell_size_m
    }

    fn add(self, diagonal: bool) -> Self {
        if diagonal {
            StepCost { diagonal: self.diagonal + 1, ..self }
        } else {
            StepCost { straight: self.straight + 1, ..self }
        }
    }
}

impl Ord for StepCost {
    fn cmp(&self, other: &Self) -> Ordering {
        let p = self.straight as i64 - other.straight as i64;
        let q = self.diagonal as i64 - other.diagonal as i64;
        // sign of p + q·√2
        match (p.signum(), q.signum()) {
            (0, 0) => Ordering::Equal,
            (a, b) if a >= 0 && b >= 0 => Ordering::Greater,
            (a, b) if a <= 0 && b <= 0 => Ordering::Less,
            (1, _) => (p * p).cmp(&(2 * q * q)),
            _ => (2 * q * q).cmp(&(p * p)),
        }
    }
}

impl PartialOrd for StepCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    pub steps: StepCost,
    pub cost: f64,
}

const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Free 8-connected neighbors; diagonal moves may not cut an occupied corner.
pub fn neighbors(grid: &OccupancyGrid, cell: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    NEIGHBORS.iter().filter_map(move |&(dr, dc)| {
        let (r, c) = (cell.row as isize + dr, cell.col as isize + dc);
        if !grid.in_bounds(r, c) {
            return None;
        }
        let next = Cell::new(r as usize, c as usize);
        if grid.is_occupied(next) {
            return None;
        }
        let diagonal = dr != 0 && dc != 0;
        if diagonal
            && (grid.is_occupied(Cell::new(r as usize, cell.col)) || grid.is_occupied(Cell::new(cell.row, c as usize)))
        {
            return None;
        }
        Some((next, diagonal))
    })
}

/// Minimum-cost 8-connected path between two free cells.
///
/// Frontier ties pop the lower row first, then the lower column; a cell's
/// predecessor only changes on a strictly cheaper route, so output is
/// reproducible.
pub fn dijkstra_plan(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<GridPath> {
    for (name, c) in [("start", start), ("goal", goal)] {
        if c.row >= grid.rows || c.col >= grid.cols {
            return Err(Error::InvalidEndpoint(format!("{name} {c:?} outside grid")));
        }
        if grid.is_occupied(c) {
            return Err(Error::InvalidEndpoint(format!("{name} {c:?}")));
        }
    }
    let idx = |c: Cell| c.row * grid.cols + c.col;
    let mut best: Vec<Option<StepCost>> = vec![None; grid.rows * grid.cols];
    let mut parent: Vec<Option<Cell>> = vec![None; grid.rows * grid.cols];
    let mut done = vec![false; grid.rows * grid.cols];
    let mut heap = BinaryHeap::new();
    best[idx(start)] = Some(StepCost::default());
    heap.push(Reverse((StepCost::default(), start)));

    while let Some(Reverse((cost, cell))) = heap.pop() {
        if done[idx(cell)] {
            continue;
        }
        done[idx(cell)] = true;
        if cell == goal {
            let mut cells = vec![goal];
            let mut cur = goal;
            while let Some(p) = parent[idx(cur)] {
                cells.push(p);
                cur = p;
            }
            cells.reverse();
            return Ok(GridPath { cells, steps: cost, cost: cost.meters(grid.cell_size_m) });
        }
        for (next, diagonal) in neighbors(grid, cell) {
            if done[idx(next)] {
                continue;
            }
            let cand = cost.add(diagonal);
            if best[idx(next)].is_none_or(|b| cand < b) {
                best[idx(next)] = Some(cand);
                parent[idx(next)] = Some(cell);
                heap.push(Reverse((cand, next)));
            }
        }
    }
    Err(Error::NoPath)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BendyConfig {
    pub lookahead_m: f64,
    pub margin_m: f64,
    pub step_deg: f64,
    pub max_deviation_deg: f64,
}

impl Default for BendyConfig {
    fn default() -> Self {
        BendyConfig { lookahead_m: 5.0, margin_m: 0.8, step_deg: 5.0, max_deviation_deg: 80.0 }
    }
}

impl BendyConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lookahead_m, self.margin_m, self.step_deg, self.max_deviation_deg].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::param("avoidance parameters must be positive"))
        }
    }

    /// Candidate deviations in evaluation order: 0, -s, +s, -2s, +2s, ...
    /// Negative (rightward) goes first at each magnitude.
    pub fn candidate_deviations(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut k = 1;
        while k as f64 * self.step_deg <= self.max_deviation_deg + 1e-9 {
            let d = (k as f64 * self.step_deg).to_radians();
            out.push(-d);
            out.push(d);
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvoidanceDecision {
    /// World-frame bearing to steer toward.
    pub chosen_bearing: f64,
    pub clear: bool,
    /// Signed offset from the direct-to-target bearing.
    pub deviation: f64,
}

/// Whether a probe along `bearing` is free of scan points.
///
/// Only points ahead of the rover (positive along-probe projection) count;
/// each must lie farther than `margin_m` from the probe segment.
pub fn probe_is_clear(points: &[(f64, f64)], x: f64, y: f64, bearing: f64, cfg: &BendyConfig) -> bool {
    let (uy, ux) = bearing.sin_cos();
    points.iter().all(|&(px, py)| {
        let (rx, ry) = (px - x, py - y);
        let along = rx * ux + ry * uy;
        if along <= 0.0 {
            return true;
        }
        let lateral = (rx * uy - ry * ux).abs();
        let dist = if along <= cfg.lookahead_m { lateral } else { (along - cfg.lookahead_m).hypot(lateral) };
        dist > cfg.margin_m
    })
}

/// One BendyRuler decision: the least-deviating clear bearing toward `target`.
pub fn bendyruler_step(state: &RoverState, target: (f64, f64), scan: &LidarScan, cfg: &BendyConfig) -> AvoidanceDecision {
    let direct = (target.1 - state.y).atan2(target.0 - state.x);
    let points = scan.points(state.x, state.y, state.heading);
    for dev in cfg.candidate_deviations() {
        let bearing = wrap_angle(direct + dev);
        if probe_is_clear(&points, state.x, state.y, bearing, cfg) {
            return AvoidanceDecision { chosen_bearing: bearing, clear: true, deviation: dev };
        }
    }
    AvoidanceDecision { chosen_bearing: wrap_angle(direct), clear: false, deviation: 0.0 }
}

/// Signed heading error in `(-π, π]`; positive means turn left.
pub fn heading_error(bearing: f64, heading: f64) -> f64 {
    let e = wrap_angle(bearing - heading);
    if e == -PI {
        PI
    } else {
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerGains {
    pub kp: f64,
}

impl Default for SteerGains {
    fn default() -> Self {
        SteerGains { kp: 1.5 }
    }
}

/// Proportional heading controller; throttle is the speed command as a
/// fraction of top speed.
pub fn steer_to_bearing(state: &RoverState, bearing: f64, speed_cmd: f64, params: &VehicleParams, gains: &SteerGains) -> (f64, f64) {
    let steer = (gains.kp * heading_error(bearing, state.heading)).clamp(-params.max_steer, params.max_steer);
    let throttle = (speed_cmd / params.max_speed).clamp(0.0, 1.0);
    (throttle, steer)
}

/// Dijkstra leg between two world points, followed with a moving carrot.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFollower {
    pub path: GridPath,
    points: Vec<(f64, f64)>,
    progress: usize,
    goal: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowConfig {
    /// Carrot distance ahead along the path.
    pub carrot_m: f64,
    /// Off-path distance, in cells, that triggers a replan.
    pub replan_cells: f64,
}

impl Default for FollowConfig {
    fn default() -> Self {
        FollowConfig { carrot_m: 5.0, replan_cells: 2.0 }
    }
}

impl PathFollower {
    pub fn plan(grid: &OccupancyGrid, from: (f64, f64), goal: (f64, f64)) -> Result<Self> {
        let snap = |p: (f64, f64)| {
            grid.cell_at(p.0, p.1).filter(|c| grid.is_free(*c)).or_else(|| grid.nearest_free(p.0, p.1)).ok_or(Error::NoPath)
        };
        let path = dijkstra_plan(grid, snap(from)?, snap(goal)?)?;
        let mut points: Vec<(f64, f64)> = path.cells.iter().map(|&c| grid.center(c)).collect();
        *points.last_mut().expect("path is never empty") = goal;
        Ok(PathFollower { path, points, progress: 0, goal })
    }

    pub fn goal(&self) -> (f64, f64) {
        self.goal
    }

    /// Distance from `pos` to the closest remaining path point.
    pub fn off_path(&self, pos: (f64, f64)) -> f64 {
        self.points[self.progress..].iter().map(|p| (p.0 - pos.0).hypot(p.1 - pos.1)).fold(f64::INFINITY, f64::min)
    }

    pub fn needs_replan(&self, pos: (f64, f64), cell_size_m: f64, cfg: &FollowConfig) -> bool {
        self.off_path(pos) > cfg.replan_cells * cell_size_m
    }

    /// Advances progress to the nearest upcoming point and returns the carrot.
    pub fn target(&mut self, pos: (f64, f64), cfg: &FollowConfig) -> (f64, f64) {
        let window = (self.progress + 12).min(self.points.len());
        let d = |p: &(f64, f64)| (p.0 - pos.0).hypot(p.1 - pos.1);
        if let Some((i, _)) =
            self.points[self.progress..window].iter().enumerate().min_by(|a, b| d(a.1).total_cmp(&d(b.1)).then(a.0.cmp(&b.0)))
        {
            self.progress += i;
        }
        self.points[self.progress..].iter().copied().find(|p| d(p) >= cfg.carrot_m).unwrap_or(self.goal)
    }
}
