//! Mission executive: one owner of all mutable vehicle state, advanced one
//! control cycle at a time.
//!
//! Each tick reads sensors, runs failsafes and waypoint logic, picks a
//! bearing with BendyRuler along the current Dijkstra leg, steers and
//! integrates kinematics. Commands are only applied between ticks.

use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mission::{
    arm, run_prearm, GeotagRecord, HealthInputs, LedState, MissionFile, MissionPlan, MissionState, PreArmReport,
    PrearmThresholds,
};
use crate::nav::{bendyruler_step, heading_error, steer_to_bearing, AvoidanceDecision, BendyConfig, FollowConfig, PathFollower, SteerGains};
use crate::rng::{self, SimRng};
use crate::sensors::{scan, BaseStation, GpsConfig, GpsFix, GpsReceiver, LidarConfig, LidarScan, RtkCorrection};
use crate::telemetry::{Ack, Action, Command, CorrectionServer, ModeRequest, TelemetryFrame, TelemetryLog, TelemetryServer};
use crate::world::{clearance, rasterize, step_kinematics, FieldMap, Obstacle, OccupancyGrid, RoverState, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub vehicle: VehicleParams,
    pub lidar: LidarConfig,
    pub gps: GpsConfig,
    pub bendy: BendyConfig,
    pub follow: FollowConfig,
    pub gains: SteerGains,
    pub prearm: PrearmThresholds,
    pub grid_cell_m: f64,
    pub planning_inflation_m: f64,
    pub rtk: bool,
    pub base_station: (f64, f64),
    pub failsafe_timeout_s: f64,
    pub override_timeout_s: f64,
    /// Continuous time with no clear bearing before the rover holds.
    pub blocked_timeout_s: f64,
    pub telemetry_rate_hz: f64,
    pub boot_s: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.05,
            vehicle: VehicleParams::default(),
            lidar: LidarConfig::default(),
            gps: GpsConfig::default(),
            bendy: BendyConfig::default(),
            follow: FollowConfig::default(),
            gains: SteerGains::default(),
            prearm: PrearmThresholds::default(),
            grid_cell_m: 0.5,
            planning_inflation_m: 0.9,
            rtk: true,
            base_station: (0.0, 0.0),
            failsafe_timeout_s: 2.0,
            override_timeout_s: 0.5,
            blocked_timeout_s: 5.0,
            telemetry_rate_hz: 10.0,
            boot_s: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn noiseless() -> Self {
        SimConfig {
            gps: GpsConfig::noiseless(),
            lidar: LidarConfig { noise_sigma: 0.0, ..LidarConfig::default() },
            ..Self::default()
        }
    }

    fn frame_every(&self) -> u64 {
        ((1.0 / (self.telemetry_rate_hz * self.dt)).round() as u64).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MissionEvent {
    StateChanged { from: MissionState, to: MissionState },
    WaypointReached { index: usize },
    /// The camera trigger pulse.
    Capture { image_id: String, waypoint_index: usize },
    Geotag(GeotagRecord),
    Failsafe { reason: String },
    Replanned { waypoint_index: usize },
    PlanFailed { waypoint_index: usize, reason: String },
    Collision { clearance_m: f64 },
}

impl MissionEvent {
    fn describe(&self) -> String {
        match self {
            MissionEvent::StateChanged { to, .. } => format!("mode {to}"),
            MissionEvent::WaypointReached { index } => format!("waypoint {index} reached"),
            MissionEvent::Capture { image_id, .. } => format!("capture {image_id}"),
            MissionEvent::Geotag(r) => format!("geotag {}", r.image_id),
            MissionEvent::Failsafe { reason } => format!("failsafe {reason}"),
            MissionEvent::Replanned { waypoint_index } => format!("replanned to waypoint {waypoint_index}"),
            MissionEvent::PlanFailed { reason, .. } => format!("plan failed: {reason}"),
            MissionEvent::Collision { clearance_m } => format!("collision {clearance_m:.3}"),
        }
    }
}

/// Everything BendyRuler saw and decided on one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickTrace {
    pub t: f64,
    pub pose: RoverState,
    pub target: (f64, f64),
    pub scan: LidarScan,
    pub decision: AvoidanceDecision,
}

#[derive(Debug, Clone, Default)]
pub struct TickResult {
    pub events: Vec<MissionEvent>,
    pub frame: Option<TelemetryFrame>,
    pub correction: Option<RtkCorrection>,
    pub led: Option<LedState>,
}

#[derive(Debug, Clone, Copy)]
struct Override {
    throttle: f64,
    steer: f64,
    received: f64,
}

pub struct Simulation {
    pub cfg: SimConfig,
    planning_map: FieldMap,
    truth_map: FieldMap,
    grid: OccupancyGrid,
    state: RoverState,
    fix: GpsFix,
    mode: MissionState,
    led: LedState,
    plan: Option<MissionPlan>,
    wp_index: usize,
    follower: Option<PathFollower>,
    receiver: GpsReceiver,
    base: BaseStation,
    gps_rng: SimRng,
    lidar_rng: SimRng,
    t: f64,
    tick: u64,
    health: HealthInputs,
    last_rc_heartbeat: f64,
    manual: Option<Override>,
    blocked_since: Option<f64>,
    geotags: Vec<GeotagRecord>,
    events: Vec<MissionEvent>,
    captures: usize,
    odometer: f64,
    min_clearance: f64,
    collisions: usize,
    last_event: Option<String>,
    trace: Option<Vec<TickTrace>>,
}

impl Simulation {
    /// `planning_map` is what the planner knows; `unmapped` obstacles exist
    /// only in the world the sensors see.
    pub fn new(planning_map: FieldMap, unmapped: &[Obstacle], start: RoverState, cfg: SimConfig) -> Result<Self> {
        planning_map.validate()?;
        cfg.lidar.validate()?;
        cfg.bendy.validate()?;
        cfg.gps.validate()?;
        if !(cfg.dt > 0.0) || !(cfg.telemetry_rate_hz > 0.0) {
            return Err(Error::param("dt and telemetry rate must be positive"));
        }
        let mut truth_map = planning_map.clone();
        truth_map.obstacles.extend_from_slice(unmapped);
        truth_map.validate()?;
        let grid = rasterize(&planning_map, cfg.grid_cell_m, cfg.planning_inflation_m)?;
        let mut gps_rng = rng::substream(cfg.seed, rng::GPS);
        let receiver = GpsReceiver::new(cfg.gps, &mut gps_rng);
        let health = HealthInputs { battery_v: start.battery_v, vibration: start.vibration, ..HealthInputs::default() };
        Ok(Simulation {
            planning_map,
            truth_map,
            grid,
            state: start,
            fix: GpsFix::none(),
            mode: MissionState::Disarmed,
            led: LedState::RedBooting,
            plan: None,
            wp_index: 0,
            follower: None,
            receiver,
            base: BaseStation { known: cfg.base_station },
            gps_rng,
            lidar_rng: rng::substream(cfg.seed, rng::LIDAR),
            t: 0.0,
            tick: 0,
            health,
            last_rc_heartbeat: 0.0,
            manual: None,
            blocked_since: None,
            geotags: Vec::new(),
            events: Vec::new(),
            captures: 0,
            odometer: 0.0,
            min_clearance: f64::INFINITY,
            collisions: 0,
            last_event: None,
            trace: None,
            cfg,
        })
    }

    pub fn record_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<TickTrace> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn mode(&self) -> MissionState {
        self.mode
    }

    pub fn led(&self) -> LedState {
        self.led
    }

    pub fn state(&self) -> &RoverState {
        &self.state
    }

    pub fn fix(&self) -> &GpsFix {
        &self.fix
    }

    pub fn geotags(&self) -> &[GeotagRecord] {
        &self.geotags
    }

    pub fn events(&self) -> &[MissionEvent] {
        &self.events
    }

    pub fn plan(&self) -> Option<&MissionPlan> {
        self.plan.as_ref()
    }

    pub fn waypoint_index(&self) -> usize {
        self.wp_index
    }

    pub fn min_clearance(&self) -> f64 {
        self.min_clearance
    }

    pub fn collisions(&self) -> usize {
        self.collisions
    }

    pub fn odometer(&self) -> f64 {
        self.odometer
    }

    pub fn planning_map(&self) -> &FieldMap {
        &self.planning_map
    }

    pub fn truth_map(&self) -> &FieldMap {
        &self.truth_map
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    /// Mutable access to the injected health scalars.
    pub fn health_mut(&mut self) -> &mut HealthInputs {
        &mut self.health
    }

    pub fn set_battery_v(&mut self, v: f64) {
        self.state.battery_v = v;
        self.health.battery_v = v;
    }

    /// The RC receiver saw a transmitter frame now.
    pub fn rc_heartbeat(&mut self) {
        self.last_rc_heartbeat = self.t;
    }

    pub fn prearm(&self) -> PreArmReport {
        let h = HealthInputs { gps_fix: self.fix.fix_type, battery_v: self.state.battery_v, vibration: self.state.vibration, ..self.health };
        run_prearm(&h, &self.cfg.prearm)
    }

    fn set_mode(&mut self, to: MissionState, out: &mut Vec<MissionEvent>) -> Result<()> {
        if to == self.mode {
            return Ok(());
        }
        let from = self.mode;
        self.mode = from.transition(to)?;
        if to == MissionState::Hold || to == MissionState::Disarmed {
            self.manual = None;
        }
        out.push(MissionEvent::StateChanged { from, to });
        Ok(())
    }

    pub fn arm(&mut self) -> Result<()> {
        let report = self.prearm();
        let to = arm(self.mode, &report)?;
        let mut ev = Vec::new();
        self.set_mode(to, &mut ev)?;
        self.log_events(ev);
        Ok(())
    }

    pub fn upload(&mut self, plan: MissionPlan) -> Result<()> {
        if self.mode == MissionState::MissionRunning {
            return Err(Error::InvalidMission("mission running".into()));
        }
        plan.validate(&self.cfg.vehicle)?;
        self.plan = Some(plan);
        self.wp_index = 0;
        self.follower = None;
        Ok(())
    }

    pub fn start_mission(&mut self) -> Result<()> {
        if self.plan.is_none() {
            return Err(Error::InvalidMission("no mission uploaded".into()));
        }
        let mut ev = Vec::new();
        self.blocked_since = None;
        match self.mode {
            MissionState::Armed | MissionState::Hold => self.set_mode(MissionState::MissionRunning, &mut ev)?,
            MissionState::MissionRunning => {}
            other => return Err(Error::InvalidTransition { from: other.to_string(), to: MissionState::MissionRunning.to_string() }),
        }
        self.log_events(ev);
        Ok(())
    }

    pub fn hold(&mut self) -> Result<()> {
        let mut ev = Vec::new();
        self.set_mode(MissionState::Hold, &mut ev)?;
        self.log_events(ev);
        Ok(())
    }

    /// Manual disarm: finishes a completed mission, otherwise holds.
    pub fn disarm(&mut self) -> Result<()> {
        let mut ev = Vec::new();
        match self.mode {
            MissionState::Disarmed => {}
            MissionState::MissionComplete => self.set_mode(MissionState::Disarmed, &mut ev)?,
            _ => self.set_mode(MissionState::Hold, &mut ev)?,
        }
        self.log_events(ev);
        Ok(())
    }

    fn log_events(&mut self, ev: Vec<MissionEvent>) {
        if let Some(last) = ev.last() {
            self.last_event = Some(last.describe());
        }
        self.events.extend(ev);
    }

    /// Applies one operator command. Only call between ticks.
    pub fn apply_command(&mut self, cmd: &Command) -> Ack {
        let res = match &cmd.action {
            Action::Arm => self.arm(),
            Action::Disarm => self.disarm(),
            Action::SetMode { mode: ModeRequest::Hold } => self.hold(),
            Action::SetMode { mode: ModeRequest::Auto } | Action::StartMission => self.start_mission(),
            Action::UploadMission { mission } => {
                if self.mode == MissionState::MissionRunning {
                    Err(Error::InvalidMission("mission running".into()))
                } else {
                    MissionFile::from_value(mission.clone())
                        .and_then(|f| f.into_plan(self.planning_map.origin_geo.as_ref(), &self.cfg.vehicle))
                        .map_err(|_| Error::InvalidMission("invalid mission".into()))
                        .and_then(|p| self.upload(p))
                }
            }
            Action::ManualOverride { throttle, steer } => {
                if !(throttle.is_finite() && steer.is_finite() && throttle.abs() <= 1.0 && steer.abs() <= 1.0) {
                    Err(Error::param("override outside [-1, 1]"))
                } else if matches!(self.mode, MissionState::Armed | MissionState::MissionRunning) {
                    self.manual = Some(Override { throttle: *throttle, steer: *steer, received: self.t });
                    Ok(())
                } else {
                    Err(Error::InvalidTransition { from: self.mode.to_string(), to: "MANUAL".into() })
                }
            }
        };
        match res {
            Ok(()) => Ack::accept(cmd.seq),
            Err(Error::InvalidMission(m)) => Ack::reject(Some(cmd.seq), m),
            Err(e) => Ack::reject(Some(cmd.seq), e.to_string()),
        }
    }

    fn est_pose(&self) -> RoverState {
        let (x, y) = self.fix.est.unwrap_or((self.state.x, self.state.y));
        RoverState { x, y, ..self.state }
    }

    fn distance_to_waypoint(&self) -> f64 {
        let (Some(plan), Some((x, y))) = (self.plan.as_ref(), self.fix.est) else {
            return 0.0;
        };
        plan.waypoints.get(self.wp_index).map_or(0.0, |w| (w.x - x).hypot(w.y - y))
    }

    fn check_failsafes(&mut self, out: &mut Vec<MissionEvent>) -> Result<()> {
        if !matches!(self.mode, MissionState::Armed | MissionState::MissionRunning) {
            return Ok(());
        }
        let reason = if self.t - self.last_rc_heartbeat > self.cfg.failsafe_timeout_s {
            Some("rc_loss")
        } else if self.state.battery_v < self.cfg.prearm.min_cell_v * self.health.battery_cells as f64 {
            Some("battery_low")
        } else {
            None
        };
        if let Some(reason) = reason {
            out.push(MissionEvent::Failsafe { reason: reason.into() });
            self.set_mode(MissionState::Hold, out)?;
        }
        Ok(())
    }

    /// Waypoint completion and camera trigger. Returns true on capture.
    fn check_waypoint(&mut self, out: &mut Vec<MissionEvent>) -> Result<bool> {
        let (Some(plan), Some((x, y))) = (self.plan.as_ref(), self.fix.est) else {
            return Ok(false);
        };
        let Some(wp) = plan.waypoints.get(self.wp_index).copied() else {
            return Ok(false);
        };
        if (wp.x - x).hypot(wp.y - y) > wp.acceptance_radius {
            return Ok(false);
        }
        let index = self.wp_index;
        let last = index + 1 == plan.waypoints.len();
        out.push(MissionEvent::WaypointReached { index });
        let mut captured = false;
        if wp.trigger_camera {
            self.captures += 1;
            let image_id = format!("img_{:04}", self.captures);
            out.push(MissionEvent::Capture { image_id: image_id.clone(), waypoint_index: index });
            let record = GeotagRecord { image_id, t: self.t, fix: self.fix, waypoint_index: index };
            self.geotags.push(record.clone());
            out.push(MissionEvent::Geotag(record));
            captured = true;
        }
        self.wp_index += 1;
        self.follower = None;
        if last {
            self.set_mode(MissionState::MissionComplete, out)?;
        }
        Ok(captured)
    }

    fn autopilot(&mut self, scan: &LidarScan, out: &mut Vec<MissionEvent>) -> Result<(f64, f64)> {
        let Some(wp) = self.plan.as_ref().and_then(|p| p.waypoints.get(self.wp_index)).copied() else {
            return Ok((0.0, 0.0));
        };
        let pose = self.est_pose();
        let pos = (pose.x, pose.y);
        let stale = self.follower.as_ref().is_some_and(|f| f.needs_replan(pos, self.grid.cell_size_m, &self.cfg.follow));
        if self.follower.is_none() || stale {
            match PathFollower::plan(&self.grid, pos, (wp.x, wp.y)) {
                Ok(f) => {
                    if stale {
                        out.push(MissionEvent::Replanned { waypoint_index: self.wp_index });
                    }
                    self.follower = Some(f);
                }
                Err(e) => {
                    out.push(MissionEvent::PlanFailed { waypoint_index: self.wp_index, reason: e.to_string() });
                    self.set_mode(MissionState::Hold, out)?;
                    return Ok((0.0, 0.0));
                }
            }
        }
        let target = self.follower.as_mut().expect("planned above").target(pos, &self.cfg.follow);
        let decision = bendyruler_step(&pose, target, scan, &self.cfg.bendy);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TickTrace { t: self.t, pose, target, scan: scan.clone(), decision });
        }
        if !decision.clear {
            let since = *self.blocked_since.get_or_insert(self.t);
            if self.t - since >= self.cfg.blocked_timeout_s {
                self.blocked_since = None;
                out.push(MissionEvent::Failsafe { reason: "path blocked".into() });
                self.set_mode(MissionState::Hold, out)?;
            }
            return Ok((0.0, 0.0));
        }
        self.blocked_since = None;
        // Slow down while the nose is far off the chosen bearing.
        let err = heading_error(decision.chosen_bearing, pose.heading).abs();
        let speed_cmd = wp.speed * err.cos().max(0.3);
        Ok(steer_to_bearing(&pose, decision.chosen_bearing, speed_cmd, &self.cfg.vehicle, &self.cfg.gains))
    }

    /// Advances the simulation by one control cycle.
    pub fn tick(&mut self) -> Result<TickResult> {
        let dt = self.cfg.dt;
        let mut out = Vec::new();

        self.receiver.advance(dt, &mut self.gps_rng);
        let correction = self.cfg.rtk.then(|| self.base.correction(&self.receiver.bias, self.t));
        self.fix = self.receiver.measure(&self.state, self.t, correction.as_ref(), &mut self.gps_rng);
        let scan = scan(&self.state, &self.truth_map, &self.cfg.lidar, self.t, &mut self.lidar_rng)?;

        self.check_failsafes(&mut out)?;
        let captured = if self.mode == MissionState::MissionRunning { self.check_waypoint(&mut out)? } else { false };

        let manual = self.manual.filter(|m| self.t - m.received <= self.cfg.override_timeout_s);
        if manual.is_none() {
            self.manual = None;
        }
        let (throttle, steer) = match (self.mode, manual) {
            (MissionState::Armed | MissionState::MissionRunning, Some(m)) => (m.throttle, m.steer * self.cfg.vehicle.max_steer),
            (MissionState::MissionRunning, None) => self.autopilot(&scan, &mut out)?,
            _ => (0.0, 0.0),
        };

        let prev = self.state;
        self.state = step_kinematics(&self.state, throttle, steer, dt, &self.cfg.vehicle);
        self.odometer += (self.state.x - prev.x).hypot(self.state.y - prev.y);
        let c = clearance(&self.state, &self.truth_map, self.cfg.vehicle.rover_radius_m);
        self.min_clearance = self.min_clearance.min(c);
        if c < 0.0 {
            self.collisions += 1;
            out.push(MissionEvent::Collision { clearance_m: c });
        }

        self.t = (self.tick + 1) as f64 * dt;
        self.tick += 1;
        self.led = if captured {
            LedState::GreenCapturing
        } else if self.t < self.cfg.boot_s {
            LedState::RedBooting
        } else {
            LedState::YellowReady
        };

        let frame = (self.tick % self.cfg.frame_every() == 0).then(|| self.frame());
        let events = out.clone();
        self.log_events(out);
        Ok(TickResult { events, frame, correction, led: Some(self.led) })
    }

    pub fn mission_tick(&mut self) -> Result<Vec<MissionEvent>> {
        Ok(self.tick()?.events)
    }

    pub fn frame(&self) -> TelemetryFrame {
        let (x, y) = self.fix.est.unwrap_or((self.state.x, self.state.y));
        let geo = self.planning_map.origin_geo.map(|a| a.to_geo(x, y));
        TelemetryFrame {
            t: self.t,
            mode: self.mode,
            armed: self.mode.is_armed(),
            x,
            y,
            lat: geo.map(|g| g.0),
            lon: geo.map(|g| g.1),
            altitude_m: 0.0,
            heading: self.state.heading.to_degrees(),
            ground_speed: self.state.speed,
            distance_to_waypoint: self.distance_to_waypoint(),
            next_waypoint: self.wp_index,
            waypoint_count: self.plan.as_ref().map_or(0, |p| p.waypoints.len()),
            waypoints_completed: self.wp_index,
            captures: self.captures,
            odometer_m: self.odometer,
            min_clearance_m: self.min_clearance.is_finite().then_some(self.min_clearance),
            battery_v: self.state.battery_v,
            fix_type: self.fix.fix_type,
            led_state: self.led,
            last_event: self.last_event.clone(),
        }
    }
}

/// Mission statistics derived purely from the frame stream, so a replayed
/// log reproduces exactly what the live run reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub frames: usize,
    pub final_mode: Option<MissionState>,
    pub waypoints_total: usize,
    pub waypoints_hit: usize,
    pub captures: usize,
    pub distance_traveled_m: f64,
    pub min_clearance_m: Option<f64>,
    pub completion_time_s: Option<f64>,
    pub duration_s: f64,
}

pub fn summarize(frames: &[TelemetryFrame]) -> MissionSummary {
    let last = frames.last();
    MissionSummary {
        frames: frames.len(),
        final_mode: last.map(|f| f.mode),
        waypoints_total: last.map_or(0, |f| f.waypoint_count),
        waypoints_hit: last.map_or(0, |f| f.waypoints_completed),
        captures: last.map_or(0, |f| f.captures),
        distance_traveled_m: last.map_or(0.0, |f| f.odometer_m),
        min_clearance_m: last.and_then(|f| f.min_clearance_m),
        completion_time_s: frames.iter().find(|f| f.mode == MissionState::MissionComplete).map(|f| f.t),
        duration_s: last.map_or(0.0, |f| f.t),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Scenario {
    /// Obstacles the planner does not know about.
    pub unmapped: Vec<Obstacle>,
    /// Stop sending RC heartbeats from this time on.
    pub rc_loss_at: Option<f64>,
    pub battery_v: Option<f64>,
    pub health: Option<HealthInputs>,
    pub max_time_s: Option<f64>,
}

pub struct RunOutcome {
    pub prearm: PreArmReport,
    pub frames: Vec<TelemetryFrame>,
    pub events: Vec<MissionEvent>,
    pub geotags: Vec<GeotagRecord>,
    pub summary: MissionSummary,
    pub trace: Vec<TickTrace>,
    pub collisions: usize,
    pub min_clearance: f64,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.summary.final_mode == Some(MissionState::MissionComplete)
    }
}

/// Headless mission: boot, pre-arm, arm, upload, run to completion or hold.
///
/// `on_frame` sees every frame as it is produced (log writers, telemetry).
/// A pre-arm failure returns `ArmRefused` before the vehicle moves.
pub fn run_mission(
    world: &FieldMap,
    plan: &MissionPlan,
    start: RoverState,
    cfg: SimConfig,
    scenario: &Scenario,
    trace: bool,
    mut on_frame: impl FnMut(&TelemetryFrame, Option<&RtkCorrection>) -> Result<()>,
) -> Result<RunOutcome> {
    let mut sim = Simulation::new(world.clone(), &scenario.unmapped, start, cfg)?;
    if let Some(h) = scenario.health {
        *sim.health_mut() = h;
    }
    if let Some(v) = scenario.battery_v {
        sim.set_battery_v(v);
    }
    if trace {
        sim.record_trace();
    }
    let mut frames = Vec::new();
    let max_t = scenario.max_time_s.unwrap_or_else(|| default_time_budget(plan, &start));
    let mut step = |sim: &mut Simulation, frames: &mut Vec<TelemetryFrame>| -> Result<()> {
        if scenario.rc_loss_at.is_none_or(|t| sim.time() < t) {
            sim.rc_heartbeat();
        }
        let r = sim.tick()?;
        if let Some(f) = r.frame {
            on_frame(&f, r.correction.as_ref())?;
            frames.push(f);
        }
        Ok(())
    };

    while sim.time() < sim.cfg.boot_s - 1e-9 {
        step(&mut sim, &mut frames)?;
    }
    let prearm = sim.prearm();
    sim.arm()?;
    sim.upload(plan.clone())?;
    sim.start_mission()?;

    let frame_every = sim.cfg.frame_every();
    let mut stopped_since: Option<f64> = None;
    loop {
        step(&mut sim, &mut frames)?;
        let at_frame = sim.tick % frame_every == 0;
        let done = match sim.mode() {
            MissionState::MissionComplete => true,
            MissionState::Hold => {
                let still = sim.state().speed == 0.0;
                let since = *stopped_since.get_or_insert(sim.time());
                if !still {
                    stopped_since = Some(sim.time());
                }
                still && sim.time() - since >= 1.0
            }
            _ => false,
        };
        if (done || sim.time() >= max_t) && at_frame {
            break;
        }
    }

    let summary = summarize(&frames);
    Ok(RunOutcome {
        prearm,
        summary,
        frames,
        events: sim.events().to_vec(),
        geotags: sim.geotags().to_vec(),
        trace: sim.take_trace(),
        collisions: sim.collisions(),
        min_clearance: sim.min_clearance(),
    })
}

fn default_time_budget(plan: &MissionPlan, start: &RoverState) -> f64 {
    let mut prev = (start.x, start.y);
    let mut t = 30.0;
    for w in &plan.waypoints {
        t += 3.0 * (w.x - prev.0).hypot(w.y - prev.1) / w.speed;
        prev = (w.x, w.y);
    }
    t
}

/// Free width kept beside every generated obstacle.
const PASS_GAP_M: f64 = 2.6;

/// Scatters circular obstacles along the straight legs of a mission, away
/// from the start, the waypoints and the mapped obstacles.
pub fn random_unmapped_obstacles<R: Rng + ?Sized>(
    world: &FieldMap,
    plan: &MissionPlan,
    start: (f64, f64),
    count: usize,
    rng: &mut R,
) -> Vec<Obstacle> {
    let mut legs = vec![];
    let mut prev = start;
    for w in &plan.waypoints {
        legs.push((prev, (w.x, w.y)));
        prev = (w.x, w.y);
    }
    let mut out: Vec<Obstacle> = Vec::new();
    let mut attempts = 0;
    while out.len() < count && attempts < count * 200 {
        attempts += 1;
        let (a, b) = legs[rng.random_range(0..legs.len())];
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        if len < 8.0 {
            continue;
        }
        let s = rng.random_range(4.0..len - 4.0);
        let (ux, uy) = ((b.0 - a.0) / len, (b.1 - a.1) / len);
        let lateral = rng.random_range(-0.5..0.5);
        let radius = rng.random_range(0.25..0.45);
        let (x, y) = (a.0 + ux * s - uy * lateral, a.1 + uy * s + ux * lateral);
        let candidate = Obstacle::Circle { x, y, radius };
        let near_points = std::iter::once(start).chain(plan.waypoints.iter().map(|w| (w.x, w.y))).any(|p| (p.0 - x).hypot(p.1 - y) < 4.0);
        // Leave a rover-sized gap beside it on at least one side.
        let passable = [-1.0, 1.0].iter().any(|s| {
            let off = s * (radius + PASS_GAP_M / 2.0);
            (-4..=4).all(|k| {
                let along = k as f64 * 0.5;
                world.clearance(x - uy * off + ux * along, y + ux * off + uy * along) >= PASS_GAP_M / 2.0
            })
        });
        let crowded = world.clearance(x, y) < radius + 0.5 || out.iter().any(|o| o.distance(x, y) < radius + 8.0);
        if !near_points && passable && !crowded {
            out.push(candidate);
        }
    }
    out
}

/// Options for [`run_service`].
#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Simulated seconds per wall-clock second; `None` runs flat out.
    pub time_scale: Option<f64>,
    /// Stop after this much simulated time.
    pub max_duration_s: Option<f64>,
    /// Set from another thread to stop at the next tick.
    pub stop: Option<Arc<AtomicBool>>,
}

/// Live loop: applies queued operator commands between ticks, broadcasts
/// frames and corrections, and appends every frame to `log`. The simulated
/// RC transmitter stays on; the log is flushed per frame so an interrupted
/// session keeps everything it broadcast.
pub fn run_service(
    sim: &mut Simulation,
    server: &TelemetryServer,
    corrections: Option<&CorrectionServer>,
    mut log: Option<&mut TelemetryLog>,
    opts: &ServiceOptions,
) -> Result<()> {
    let started = Instant::now();
    let t0 = sim.time();
    loop {
        if opts.stop.as_ref().is_some_and(|s| s.load(AtomicOrdering::Relaxed)) {
            break;
        }
        if opts.max_duration_s.is_some_and(|d| sim.time() - t0 >= d - 1e-9) {
            break;
        }
        for inbound in server.drain_commands() {
            let ack = match inbound.command {
                Ok(cmd) => sim.apply_command(&cmd),
                Err(nack) => nack,
            };
            server.respond(inbound.client, ack);
        }
        sim.rc_heartbeat();
        let r = sim.tick()?;
        if let (Some(c), Some(cs)) = (r.correction.as_ref(), corrections) {
            cs.publish(c);
        }
        if let Some(f) = &r.frame {
            server.broadcast_frame(f);
            if let Some(log) = log.as_deref_mut() {
                log.record(f)?;
                log.flush()?;
            }
        }
        if let Some(scale) = opts.time_scale {
            let due = Duration::from_secs_f64((sim.time() - t0) / scale);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }
    Ok(())
}
