//! Field environment, occupancy rasterization and Ackermann kinematics.
//!
//! Everything lives in a local planar ENU frame measured in meters with the
//! origin at the south-west corner of the field. A field may optionally be
//! anchored to a geographic position, in which case local coordinates are
//! converted with an equirectangular approximation (fine at field scale).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI);
    if r >= 2.0 * PI {
        r -= 2.0 * PI;
    }
    r - PI
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoAnchor {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoAnchor {
    pub fn to_geo(&self, x: f64, y: f64) -> (f64, f64) {
        let lat = self.lat_deg + (y / EARTH_RADIUS_M).to_degrees();
        let lon = self.lon_deg + (x / (EARTH_RADIUS_M * self.lat_deg.to_radians().cos())).to_degrees();
        (lat, lon)
    }

    pub fn to_local(&self, lat_deg: f64, lon_deg: f64) -> (f64, f64) {
        let y = (lat_deg - self.lat_deg).to_radians() * EARTH_RADIUS_M;
        let x = (lon_deg - self.lon_deg).to_radians() * EARTH_RADIUS_M * self.lat_deg.to_radians().cos();
        (x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Obstacle {
    Rect { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    Circle { x: f64, y: f64, radius: f64 },
}

impl Obstacle {
    /// Euclidean distance from a point to the closed obstacle (0 inside).
    pub fn distance(&self, px: f64, py: f64) -> f64 {
        match *self {
            Obstacle::Rect { x_min, y_min, x_max, y_max } => {
                let dx = (x_min - px).max(0.0).max(px - x_max);
                let dy = (y_min - py).max(0.0).max(py - y_max);
                dx.hypot(dy)
            }
            Obstacle::Circle { x, y, radius } => ((px - x).hypot(py - y) - radius).max(0.0),
        }
    }

    /// Distance along a unit-direction ray to the first hit, if any.
    pub fn ray_hit(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        match *self {
            Obstacle::Rect { x_min, y_min, x_max, y_max } => {
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                for (o, d, lo, hi) in [(ox, dx, x_min, x_max), (oy, dy, y_min, y_max)] {
                    if d == 0.0 {
                        if o < lo || o > hi {
                            return None;
                        }
                    } else {
                        let (a, b) = ((lo - o) / d, (hi - o) / d);
                        t_enter = t_enter.max(a.min(b));
                        t_exit = t_exit.min(a.max(b));
                    }
                }
                if t_exit < t_enter || t_exit < 0.0 {
                    None
                } else {
                    Some(t_enter.max(0.0))
                }
            }
            Obstacle::Circle { x, y, radius } => {
                let (fx, fy) = (ox - x, oy - y);
                let b = fx * dx + fy * dy;
                let c = fx * fx + fy * fy - radius * radius;
                if c <= 0.0 {
                    return Some(0.0);
                }
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t >= 0.0).then_some(t)
            }
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Obstacle::Rect { x_min, y_min, x_max, y_max } => (x_min, y_min, x_max, y_max),
            Obstacle::Circle { x, y, radius } => (x - radius, y - radius, x + radius, y + radius),
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            Obstacle::Rect { x_min, y_min, x_max, y_max } => {
                [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) && x_max > x_min && y_max > y_min
            }
            Obstacle::Circle { x, y, radius } => x.is_finite() && y.is_finite() && radius.is_finite() && radius > 0.0,
        }
    }

    /// Whether the obstacle overlaps the open axis-aligned square with positive area.
    fn overlaps_interior(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        match *self {
            Obstacle::Rect { x_min, y_min, x_max, y_max } => x_min < x1 && x_max > x0 && y_min < y1 && y_max > y0,
            Obstacle::Circle { x, y, radius } => rect_point_distance(x0, y0, x1, y1, x, y) < radius,
        }
    }

    fn distance_to_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
        match *self {
            Obstacle::Rect { x_min, y_min, x_max, y_max } => {
                let dx = (x_min - x1).max(0.0).max(x0 - x_max);
                let dy = (y_min - y1).max(0.0).max(y0 - y_max);
                dx.hypot(dy)
            }
            Obstacle::Circle { x, y, radius } => (rect_point_distance(x0, y0, x1, y1, x, y) - radius).max(0.0),
        }
    }
}

fn rect_point_distance(x0: f64, y0: f64, x1: f64, y1: f64, px: f64, py: f64) -> f64 {
    let dx = (x0 - px).max(0.0).max(px - x1);
    let dy = (y0 - py).max(0.0).max(py - y1);
    dx.hypot(dy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMap {
    pub width_m: f64,
    pub height_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_geo: Option<GeoAnchor>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl FieldMap {
    pub fn new(width_m: f64, height_m: f64) -> Self {
        FieldMap { width_m, height_m, origin_geo: None, obstacles: Vec::new() }
    }

    pub fn with_obstacle(mut self, o: Obstacle) -> Self {
        self.obstacles.push(o);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_m > 0.0 && self.height_m > 0.0 && self.width_m.is_finite() && self.height_m.is_finite()) {
            return Err(Error::InvalidWorld("field dimensions must be positive".into()));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.is_valid() {
                return Err(Error::InvalidWorld(format!("obstacle {i} is degenerate")));
            }
            let (x0, y0, x1, y1) = o.bounds();
            if x0 < 0.0 || y0 < 0.0 || x1 > self.width_m || y1 > self.height_m {
                return Err(Error::InvalidWorld(format!("obstacle {i} lies outside the field")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: FieldMap = serde_json::from_str(text).map_err(|e| Error::InvalidWorld(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Distance from a point to the nearest obstacle or field edge.
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        let edge = x.min(y).min(self.width_m - x).min(self.height_m - y);
        self.obstacles.iter().map(|o| o.distance(x, y)).fold(edge, f64::min)
    }

    /// First intersection of a ray with any obstacle or the field boundary.
    pub fn ray_cast(&self, ox: f64, oy: f64, angle: f64) -> f64 {
        let (dy, dx) = angle.sin_cos();
        let mut best = f64::INFINITY;
        if dx > 0.0 {
            best = best.min((self.width_m - ox) / dx);
        } else if dx < 0.0 {
            best = best.min(-ox / dx);
        }
        if dy > 0.0 {
            best = best.min((self.height_m - oy) / dy);
        } else if dy < 0.0 {
            best = best.min(-oy / dy);
        }
        for o in &self.obstacles {
            if let Some(t) = o.ray_hit(ox, oy, dx, dy) {
                best = best.min(t);
            }
        }
        best.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub cell_size_m: f64,
    pub cols: usize,
    pub rows: usize,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    /// An all-free grid, mostly useful for tests and hand-built scenarios.
    pub fn free(cols: usize, rows: usize, cell_size_m: f64) -> Self {
        OccupancyGrid { cell_size_m, cols, rows, occupied: vec![false; cols * rows] }
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.rows && (col as usize) < self.cols
    }

    pub fn is_occupied(&self, cell: Cell) -> bool {
        self.occupied[cell.row * self.cols + cell.col]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_occupied(cell)
    }

    pub fn set_occupied(&mut self, cell: Cell, occupied: bool) {
        self.occupied[cell.row * self.cols + cell.col] = occupied;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn cell_at(&self, x: f64, y: f64) -> Option<Cell> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let col = (x / self.cell_size_m).floor() as usize;
        let row = (y / self.cell_size_m).floor() as usize;
        (col < self.cols && row < self.rows).then(|| Cell::new(row, col))
    }

    pub fn center(&self, cell: Cell) -> (f64, f64) {
        ((cell.col as f64 + 0.5) * self.cell_size_m, (cell.row as f64 + 0.5) * self.cell_size_m)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| Cell::new(r, c)))
    }

    /// Nearest free cell by center distance, ties broken row-major.
    pub fn nearest_free(&self, x: f64, y: f64) -> Option<Cell> {
        self.cells().filter(|&c| self.is_free(c)).min_by(|&a, &b| {
            let (ax, ay) = self.center(a);
            let (bx, by) = self.center(b);
            let da = (ax - x).hypot(ay - y);
            let db = (bx - x).hypot(by - y);
            da.total_cmp(&db).then(a.cmp(&b))
        })
    }
}

/// Rasterizes the field onto a grid, inflating every obstacle by `inflation_m`.
///
/// A cell is occupied when an obstacle overlaps its interior or, for positive
/// inflation, when any point of the cell lies within `inflation_m` of an
/// obstacle. Space outside the field counts as an obstacle.
pub fn rasterize(map: &FieldMap, cell_size_m: f64, inflation_m: f64) -> Result<OccupancyGrid> {
    if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
        return Err(Error::param("cell size must be positive"));
    }
    if !(inflation_m >= 0.0 && inflation_m.is_finite()) {
        return Err(Error::param("inflation must be non-negative"));
    }
    let cols = (map.width_m / cell_size_m).ceil() as usize;
    let rows = (map.height_m / cell_size_m).ceil() as usize;
    let mut grid = OccupancyGrid::free(cols, rows, cell_size_m);
    for row in 0..rows {
        for col in 0..cols {
            let x0 = col as f64 * cell_size_m;
            let y0 = row as f64 * cell_size_m;
            let (x1, y1) = (x0 + cell_size_m, y0 + cell_size_m);
            let outside = x0 < inflation_m
                || y0 < inflation_m
                || x1 > map.width_m - inflation_m
                || y1 > map.height_m - inflation_m;
            let blocked = outside
                || map.obstacles.iter().any(|o| {
                    o.overlaps_interior(x0, y0, x1, y1) || (inflation_m > 0.0 && o.distance_to_rect(x0, y0, x1, y1) <= inflation_m)
                });
            if blocked {
                grid.set_occupied(Cell::new(row, col), true);
            }
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase_m: f64,
    pub max_speed: f64,
    pub max_steer: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub rover_radius_m: f64,
    /// Battery sag while moving, volts per meter traveled.
    pub battery_drain_v_per_m: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase_m: 0.5,
            max_speed: 5.0,
            max_steer: 30f64.to_radians(),
            max_accel: 2.0,
            max_decel: 4.0,
            rover_radius_m: 0.3,
            battery_drain_v_per_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoverState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steer_angle: f64,
    pub battery_v: f64,
    pub vibration: f64,
}

impl RoverState {
    pub fn at(x: f64, y: f64, heading: f64) -> Self {
        RoverState { x, y, heading: wrap_angle(heading), speed: 0.0, steer_angle: 0.0, battery_v: 30.4, vibration: 5.0 }
    }
}

/// One explicit-Euler step of the kinematic bicycle model.
///
/// `throttle` in `[-1, 1]` sets the target speed as a fraction of
/// `max_speed`; negative values brake. Position and heading advance with the
/// speed held at the start of the step, then speed moves toward the target
/// under the acceleration limits.
pub fn step_kinematics(state: &RoverState, throttle: f64, steer: f64, dt: f64, params: &VehicleParams) -> RoverState {
    let throttle = if throttle.is_nan() { 0.0 } else { throttle.clamp(-1.0, 1.0) };
    let steer = if steer.is_nan() { 0.0 } else { steer.clamp(-params.max_steer, params.max_steer) };
    let v = state.speed;
    let (s, c) = state.heading.sin_cos();
    let x = state.x + v * c * dt;
    let y = state.y + v * s * dt;
    let heading = wrap_angle(state.heading + v / params.wheelbase_m * steer.tan() * dt);

    let target = throttle.max(0.0) * params.max_speed;
    let dv = (target - v).clamp(-params.max_decel * dt, params.max_accel * dt);
    let speed = (v + dv).clamp(0.0, params.max_speed);

    let battery_v = state.battery_v - params.battery_drain_v_per_m * v * dt;
    RoverState { x, y, heading, speed, steer_angle: steer, battery_v, vibration: state.vibration }
}

/// Distance between the rover disc and the nearest obstacle or field edge.
/// Negative when they intersect.
pub fn clearance(state: &RoverState, map: &FieldMap, rover_radius_m: f64) -> f64 {
    map.clearance(state.x, state.y) - rover_radius_m
}

/// True iff the rover disc strictly intersects an obstacle or leaves the field.
pub fn collision_check(state: &RoverState, map: &FieldMap, rover_radius_m: f64) -> bool {
    clearance(state, map, rover_radius_m) < 0.0
}
