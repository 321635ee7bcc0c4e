//! Mission plans, pre-arm checks, the vehicle state machine and geotag export.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::sensors::{FixType, GpsFix};
use crate::world::{GeoAnchor, VehicleParams};

pub const DEFAULT_ACCEPTANCE_RADIUS_M: f64 = 2.0;
pub const DEFAULT_SPEED: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub acceptance_radius: f64,
    pub trigger_camera: bool,
}

impl Waypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Waypoint { x, y, speed: DEFAULT_SPEED, acceptance_radius: DEFAULT_ACCEPTANCE_RADIUS_M, trigger_camera: false }
    }

    pub fn with_camera(mut self) -> Self {
        self.trigger_camera = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Local,
    Geo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WaypointEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default = "default_speed")]
    speed: f64,
    #[serde(default = "default_radius")]
    acceptance_radius: f64,
    #[serde(default)]
    trigger_camera: bool,
}

fn default_speed() -> f64 {
    DEFAULT_SPEED
}

fn default_radius() -> f64 {
    DEFAULT_ACCEPTANCE_RADIUS_M
}

/// On-disk and on-wire mission document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionFile {
    frame: Frame,
    waypoints: Vec<WaypointEntry>,
}

impl MissionFile {
    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::InvalidMission(e.to_string()))
    }

    pub fn into_plan(self, anchor: Option<&GeoAnchor>, params: &VehicleParams) -> Result<MissionPlan> {
        let mut waypoints = Vec::with_capacity(self.waypoints.len());
        for (i, w) in self.waypoints.into_iter().enumerate() {
            let (x, y) = match (self.frame, w.x, w.y, w.lat, w.lon) {
                (Frame::Local, Some(x), Some(y), None, None) => (x, y),
                (Frame::Geo, None, None, Some(lat), Some(lon)) => {
                    let a = anchor.ok_or_else(|| Error::InvalidMission("geo mission needs a geo-anchored world".into()))?;
                    a.to_local(lat, lon)
                }
                _ => return Err(Error::InvalidMission(format!("waypoint {i}: coordinates do not match frame"))),
            };
            waypoints.push(Waypoint { x, y, speed: w.speed, acceptance_radius: w.acceptance_radius, trigger_camera: w.trigger_camera });
        }
        let plan = MissionPlan { waypoints };
        plan.validate(params)?;
        Ok(plan)
    }
}

impl MissionPlan {
    pub fn new(waypoints: Vec<Waypoint>) -> Self {
        MissionPlan { waypoints }
    }

    pub fn validate(&self, params: &VehicleParams) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidMission("mission has no waypoints".into()));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !(w.x.is_finite() && w.y.is_finite()) {
                return Err(Error::InvalidMission(format!("waypoint {i}: non-finite position")));
            }
            if !(w.acceptance_radius > 0.0 && w.acceptance_radius.is_finite()) {
                return Err(Error::InvalidMission(format!("waypoint {i}: acceptance radius must be positive")));
            }
            if !(w.speed > 0.0 && w.speed <= params.max_speed) {
                return Err(Error::InvalidMission(format!("waypoint {i}: speed {} outside (0, {}]", w.speed, params.max_speed)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, anchor: Option<&GeoAnchor>, params: &VehicleParams) -> Result<Self> {
        let file: MissionFile = serde_json::from_str(text).map_err(|e| Error::InvalidMission(e.to_string()))?;
        file.into_plan(anchor, params)
    }

    pub fn load(path: impl AsRef<Path>, anchor: Option<&GeoAnchor>, params: &VehicleParams) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, anchor, params)
    }

    /// Local-frame mission document.
    pub fn to_file(&self) -> MissionFile {
        MissionFile {
            frame: Frame::Local,
            waypoints: self
                .waypoints
                .iter()
                .map(|w| WaypointEntry {
                    x: Some(w.x),
                    y: Some(w.y),
                    lat: None,
                    lon: None,
                    speed: w.speed,
                    acceptance_radius: w.acceptance_radius,
                    trigger_camera: w.trigger_camera,
                })
                .collect(),
        }
    }

    pub fn capture_count(&self) -> usize {
        self.waypoints.iter().filter(|w| w.trigger_camera).count()
    }
}

/// Simulated health inputs evaluated by the pre-arm checklist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthInputs {
    pub accel_calibrated: bool,
    pub gyro_calibrated: bool,
    pub compass_calibrated: bool,
    pub ahrs_ok: bool,
    pub gps_fix: FixType,
    pub rc_signal_ok: bool,
    /// Throttle stick position in `[-1, 1]`.
    pub throttle_input: f64,
    pub failsafe_configured: bool,
    pub battery_v: f64,
    pub battery_cells: u32,
    /// Normalized EKF innovation variance; healthy below the threshold.
    pub ekf_variance: f64,
    /// Vibration level, m/s².
    pub vibration: f64,
    pub internal_hw_ok: bool,
    pub logging_ok: bool,
    pub tuning_ok: bool,
}

impl Default for HealthInputs {
    fn default() -> Self {
        HealthInputs {
            accel_calibrated: true,
            gyro_calibrated: true,
            compass_calibrated: true,
            ahrs_ok: true,
            gps_fix: FixType::Gps3d,
            rc_signal_ok: true,
            throttle_input: 0.0,
            failsafe_configured: true,
            battery_v: 30.4,
            battery_cells: 8,
            ekf_variance: 0.1,
            vibration: 5.0,
            internal_hw_ok: true,
            logging_ok: true,
            tuning_ok: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrearmThresholds {
    pub min_cell_v: f64,
    pub max_vibration: f64,
    pub max_ekf_variance: f64,
    pub throttle_deadband: f64,
}

impl Default for PrearmThresholds {
    fn default() -> Self {
        PrearmThresholds { min_cell_v: 3.5, max_vibration: 30.0, max_ekf_variance: 0.8, throttle_deadband: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreArmCheck {
    AccelCalibrated,
    GyroCalibrated,
    CompassCalibrated,
    AhrsOk,
    GpsStatus,
    RcSignalOk,
    ThrottleNeutral,
    FailsafeConfigured,
    BatteryVOk,
    EkfHealthOk,
    VibrationOk,
    InternalHwOk,
    LoggingOk,
    TuningOk,
}

impl PreArmCheck {
    pub const ALL: [PreArmCheck; 14] = [
        PreArmCheck::AccelCalibrated,
        PreArmCheck::GyroCalibrated,
        PreArmCheck::CompassCalibrated,
        PreArmCheck::AhrsOk,
        PreArmCheck::GpsStatus,
        PreArmCheck::RcSignalOk,
        PreArmCheck::ThrottleNeutral,
        PreArmCheck::FailsafeConfigured,
        PreArmCheck::BatteryVOk,
        PreArmCheck::EkfHealthOk,
        PreArmCheck::VibrationOk,
        PreArmCheck::InternalHwOk,
        PreArmCheck::LoggingOk,
        PreArmCheck::TuningOk,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PreArmCheck::AccelCalibrated => "accel_calibrated",
            PreArmCheck::GyroCalibrated => "gyro_calibrated",
            PreArmCheck::CompassCalibrated => "compass_calibrated",
            PreArmCheck::AhrsOk => "ahrs_ok",
            PreArmCheck::GpsStatus => "gps_status",
            PreArmCheck::RcSignalOk => "rc_signal_ok",
            PreArmCheck::ThrottleNeutral => "throttle_neutral",
            PreArmCheck::FailsafeConfigured => "failsafe_configured",
            PreArmCheck::BatteryVOk => "battery_v_ok",
            PreArmCheck::EkfHealthOk => "ekf_health_ok",
            PreArmCheck::VibrationOk => "vibration_ok",
            PreArmCheck::InternalHwOk => "internal_hw_ok",
            PreArmCheck::LoggingOk => "logging_ok",
            PreArmCheck::TuningOk => "tuning_ok",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: PreArmCheck,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreArmReport {
    pub checks: Vec<CheckResult>,
}

impl PreArmReport {
    pub fn armable(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<PreArmCheck> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.check).collect()
    }

    pub fn failure_names(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.check.name(), c.detail)).collect()
    }
}

/// Evaluates every check; failures accumulate rather than short-circuit.
pub fn run_prearm(h: &HealthInputs, th: &PrearmThresholds) -> PreArmReport {
    let min_v = th.min_cell_v * h.battery_cells as f64;
    let flag = |ok: bool, what: &str| (ok, if ok { "ok".to_string() } else { what.to_string() });
    let checks = PreArmCheck::ALL
        .iter()
        .map(|&check| {
            let (passed, detail) = match check {
                PreArmCheck::AccelCalibrated => flag(h.accel_calibrated, "accelerometer not calibrated"),
                PreArmCheck::GyroCalibrated => flag(h.gyro_calibrated, "gyroscope not calibrated"),
                PreArmCheck::CompassCalibrated => flag(h.compass_calibrated, "compass not calibrated"),
                PreArmCheck::AhrsOk => flag(h.ahrs_ok, "AHRS not healthy"),
                PreArmCheck::GpsStatus => flag(h.gps_fix != FixType::None, "no GPS fix"),
                PreArmCheck::RcSignalOk => flag(h.rc_signal_ok, "RC signal lost"),
                PreArmCheck::ThrottleNeutral => {
                    flag(h.throttle_input.abs() <= th.throttle_deadband, &format!("throttle at {:.2}", h.throttle_input))
                }
                PreArmCheck::FailsafeConfigured => flag(h.failsafe_configured, "failsafe not configured"),
                PreArmCheck::BatteryVOk => {
                    flag(h.battery_v >= min_v, &format!("battery {:.2} V below {:.2} V", h.battery_v, min_v))
                }
                PreArmCheck::EkfHealthOk => {
                    flag(h.ekf_variance < th.max_ekf_variance, &format!("EKF variance {:.2}", h.ekf_variance))
                }
                PreArmCheck::VibrationOk => {
                    flag(h.vibration < th.max_vibration, &format!("vibration {:.1} m/s/s", h.vibration))
                }
                PreArmCheck::InternalHwOk => flag(h.internal_hw_ok, "internal hardware error"),
                PreArmCheck::LoggingOk => flag(h.logging_ok, "logging not available"),
                PreArmCheck::TuningOk => flag(h.tuning_ok, "tuning parameters out of range"),
            };
            CheckResult { check, passed, detail }
        })
        .collect();
    PreArmReport { checks }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MissionState {
    Disarmed,
    Armed,
    MissionRunning,
    Hold,
    MissionComplete,
}

impl MissionState {
    pub const ALL: [MissionState; 5] =
        [MissionState::Disarmed, MissionState::Armed, MissionState::MissionRunning, MissionState::Hold, MissionState::MissionComplete];

    /// Edges of the vehicle state graph. Self-loops are not transitions.
    pub fn can_transition(self, to: MissionState) -> bool {
        use MissionState::*;
        matches!(
            (self, to),
            (Disarmed, Armed)
                | (Armed, MissionRunning)
                | (Armed, Hold)
                | (MissionRunning, Hold)
                | (Hold, MissionRunning)
                | (MissionRunning, MissionComplete)
                | (Hold, MissionComplete)
                | (MissionComplete, Disarmed)
        )
    }

    pub fn transition(self, to: MissionState) -> Result<MissionState> {
        if self.can_transition(to) {
            Ok(to)
        } else {
            Err(Error::InvalidTransition { from: self.to_string(), to: to.to_string() })
        }
    }

    pub fn is_armed(self) -> bool {
        !matches!(self, MissionState::Disarmed)
    }
}

impl fmt::Display for MissionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MissionState::Disarmed => "DISARMED",
            MissionState::Armed => "ARMED",
            MissionState::MissionRunning => "MISSION_RUNNING",
            MissionState::Hold => "HOLD",
            MissionState::MissionComplete => "MISSION_COMPLETE",
        };
        f.write_str(s)
    }
}

/// Arms the vehicle if the report allows it. Already-armed states are a no-op.
pub fn arm(state: MissionState, report: &PreArmReport) -> Result<MissionState> {
    if state.is_armed() {
        return Ok(state);
    }
    if !report.armable() {
        return Err(Error::ArmRefused(report.failure_names()));
    }
    state.transition(MissionState::Armed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LedState {
    RedBooting,
    YellowReady,
    GreenCapturing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeotagRecord {
    pub image_id: String,
    pub t: f64,
    pub fix: GpsFix,
    pub waypoint_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeotagFormat {
    Csv,
    GeoJson,
}

fn check_record(r: &GeotagRecord) -> Result<(f64, f64)> {
    match (r.fix.fix_type, r.fix.est) {
        (FixType::None, _) | (_, None) => Err(Error::RecordRejected(format!("{} has no fix", r.image_id))),
        (_, Some(p)) => Ok(p),
    }
}

/// GeoJSON feature for one record. Local coordinates ride along as
/// properties so anchored exports still parse back exactly.
pub fn geotag_feature(r: &GeotagRecord, anchor: Option<&GeoAnchor>) -> Result<Value> {
    let (x, y) = check_record(r)?;
    let coordinates = match anchor {
        Some(a) => {
            let (lat, lon) = a.to_geo(x, y);
            json!([lon, lat])
        }
        None => json!([x, y]),
    };
    Ok(json!({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": coordinates},
        "properties": {
            "image_id": r.image_id,
            "t": r.t,
            "fix_type": r.fix.fix_type,
            "waypoint_index": r.waypoint_index,
            "horizontal_sigma_m": r.fix.horizontal_sigma_m,
            "x": x,
            "y": y,
        }
    }))
}

pub fn feature_collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}

pub fn export_geotags(records: &[GeotagRecord], format: GeotagFormat, anchor: Option<&GeoAnchor>) -> Result<String> {
    match format {
        GeotagFormat::GeoJson => {
            let features = records.iter().map(|r| geotag_feature(r, anchor)).collect::<Result<Vec<_>>>()?;
            Ok(serde_json::to_string_pretty(&feature_collection(features))?)
        }
        GeotagFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let (a, b) = if anchor.is_some() { ("lat", "lon") } else { ("x", "y") };
            w.write_record(["image_id", "t", a, b, "fix_type", "waypoint_index", "horizontal_sigma_m"])?;
            for r in records {
                let (x, y) = check_record(r)?;
                let (c1, c2) = match anchor {
                    Some(g) => g.to_geo(x, y),
                    None => (x, y),
                };
                w.write_record([
                    r.image_id.clone(),
                    r.t.to_string(),
                    c1.to_string(),
                    c2.to_string(),
                    r.fix.fix_type.to_string(),
                    r.waypoint_index.to_string(),
                    r.fix.horizontal_sigma_m.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

fn num(v: &Value, key: &str) -> Result<f64> {
    v.get(key).and_then(Value::as_f64).ok_or_else(|| Error::RecordRejected(format!("missing numeric {key}")))
}

pub fn parse_geotags(text: &str, format: GeotagFormat, anchor: Option<&GeoAnchor>) -> Result<Vec<GeotagRecord>> {
    let fix_of = |s: &str| FixType::parse(s).ok_or_else(|| Error::RecordRejected(format!("unknown fix type {s}")));
    match format {
        GeotagFormat::GeoJson => {
            let doc: Value = serde_json::from_str(text)?;
            let features = doc
                .get("features")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::RecordRejected("not a FeatureCollection".into()))?;
            features
                .iter()
                .map(|f| {
                    let p = f.get("properties").ok_or_else(|| Error::RecordRejected("feature without properties".into()))?;
                    let fix_type = fix_of(p.get("fix_type").and_then(Value::as_str).unwrap_or(""))?;
                    Ok(GeotagRecord {
                        image_id: p.get("image_id").and_then(Value::as_str).unwrap_or_default().to_string(),
                        t: num(p, "t")?,
                        fix: GpsFix { fix_type, est: Some((num(p, "x")?, num(p, "y")?)), horizontal_sigma_m: num(p, "horizontal_sigma_m")? },
                        waypoint_index: num(p, "waypoint_index")? as usize,
                    })
                })
                .collect()
        }
        GeotagFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let mut out = Vec::new();
            for row in rdr.records() {
                let row = row?;
                let field = |i: usize| row.get(i).ok_or_else(|| Error::RecordRejected(format!("short row {row:?}")));
                let f = |i: usize| -> Result<f64> {
                    field(i)?.parse::<f64>().map_err(|e| Error::RecordRejected(format!("column {i}: {e}")))
                };
                let (c1, c2) = (f(2)?, f(3)?);
                let (x, y) = match anchor {
                    Some(a) => a.to_local(c1, c2),
                    None => (c1, c2),
                };
                out.push(GeotagRecord {
                    image_id: field(0)?.to_string(),
                    t: f(1)?,
                    fix: GpsFix { fix_type: fix_of(field(4)?)?, est: Some((x, y)), horizontal_sigma_m: f(6)? },
                    waypoint_index: field(5)?.parse().map_err(|e| Error::RecordRejected(format!("waypoint_index: {e}")))?,
                });
            }
            Ok(out)
        }
    }
}
