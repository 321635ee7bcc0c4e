//! Simulated scanning LiDAR and GPS receiver with base-station corrections.
//!
//! GPS error is modelled as a slowly varying bias shared by every receiver in
//! the area (atmospheric delay, clock error) plus white noise whose level
//! depends on the solution type. A base station at a surveyed position sees
//! the same bias, so its `known - measured` offset cancels it at the rover.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{FieldMap, RoverState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub fov: f64,
    pub n_beams: usize,
    pub max_range: f64,
    pub noise_sigma: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig { fov: 350f64.to_radians(), n_beams: 64, max_range: 50.0, noise_sigma: 0.03 }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov <= 350f64.to_radians() + 1e-12) {
            return Err(Error::param("lidar fov must be in (0, 350deg]"));
        }
        if self.n_beams < 2 {
            return Err(Error::param("lidar needs at least two beams"));
        }
        if !(self.max_range > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::param("lidar range and noise must be positive"));
        }
        Ok(())
    }

    pub fn bearings(&self) -> impl Iterator<Item = f64> + '_ {
        let step = self.fov / (self.n_beams - 1) as f64;
        (0..self.n_beams).map(move |i| -self.fov / 2.0 + i as f64 * step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    /// Radians relative to the rover heading, counter-clockwise positive.
    pub bearing: f64,
    /// `None` is a no-return.
    pub range: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LidarScan {
    pub timestamp: f64,
    pub beams: Vec<Beam>,
}

impl LidarScan {
    /// World-frame obstacle points for every returning beam.
    pub fn points(&self, x: f64, y: f64, heading: f64) -> Vec<(f64, f64)> {
        self.beams
            .iter()
            .filter_map(|b| {
                b.range.map(|r| {
                    let (s, c) = (heading + b.bearing).sin_cos();
                    (x + r * c, y + r * s)
                })
            })
            .collect()
    }

    pub fn min_range(&self) -> Option<f64> {
        self.beams.iter().filter_map(|b| b.range).min_by(f64::total_cmp)
    }
}

/// Ray-casts every beam against the field and adds range noise.
pub fn scan<R: Rng + ?Sized>(state: &RoverState, map: &FieldMap, cfg: &LidarConfig, t: f64, rng: &mut R) -> Result<LidarScan> {
    cfg.validate()?;
    let beams = cfg
        .bearings()
        .map(|bearing| {
            let truth = map.ray_cast(state.x, state.y, state.heading + bearing);
            let range = if truth > cfg.max_range {
                None
            } else {
                let noise: f64 = if cfg.noise_sigma > 0.0 {
                    cfg.noise_sigma * Distribution::<f64>::sample(&StandardNormal, rng)
                } else {
                    0.0
                };
                Some((truth + noise).clamp(1e-3, cfg.max_range))
            };
            Beam { bearing, range }
        })
        .collect();
    Ok(LidarScan { timestamp: t, beams })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FixType {
    None,
    #[serde(rename = "GPS_3D")]
    Gps3d,
    RtkFloat,
    RtkFixed,
}

impl FixType {
    pub fn as_str(&self) -> &'static str {
        match self {
            FixType::None => "NONE",
            FixType::Gps3d => "GPS_3D",
            FixType::RtkFloat => "RTK_FLOAT",
            FixType::RtkFixed => "RTK_FIXED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "NONE" => Some(FixType::None),
            "GPS_3D" => Some(FixType::Gps3d),
            "RTK_FLOAT" => Some(FixType::RtkFloat),
            "RTK_FIXED" => Some(FixType::RtkFixed),
            _ => None,
        }
    }
}

impl std::fmt::Display for FixType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub fix_type: FixType,
    /// Estimated local position; absent when `fix_type` is `NONE`.
    pub est: Option<(f64, f64)>,
    pub horizontal_sigma_m: f64,
}

impl GpsFix {
    pub fn none() -> Self {
        GpsFix { fix_type: FixType::None, est: None, horizontal_sigma_m: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsConfig {
    /// Horizontal RMS error per solution type, meters. For `GPS_3D` this
    /// includes the shared bias; RTK solutions cancel the bias, leaving only
    /// their own white noise.
    pub sigma_gps3d: f64,
    pub sigma_rtk_float: f64,
    pub sigma_rtk_fixed: f64,
    /// Stationary horizontal RMS of the shared bias.
    pub bias_sigma: f64,
    /// Correlation time of the bias random walk.
    pub bias_tau_s: f64,
    pub fix_hold_s: f64,
    pub staleness_s: f64,
}

impl Default for GpsConfig {
    fn default() -> Self {
        GpsConfig {
            sigma_gps3d: 2.5,
            sigma_rtk_float: 0.3,
            sigma_rtk_fixed: 0.02,
            bias_sigma: 1.5,
            bias_tau_s: 120.0,
            fix_hold_s: 5.0,
            staleness_s: 3.0,
        }
    }
}

impl GpsConfig {
    pub fn noiseless() -> Self {
        GpsConfig { sigma_gps3d: 0.0, sigma_rtk_float: 0.0, sigma_rtk_fixed: 0.0, bias_sigma: 0.0, ..Self::default() }
    }

    pub fn sigma(&self, fix: FixType) -> f64 {
        match fix {
            FixType::None => f64::INFINITY,
            FixType::Gps3d => self.sigma_gps3d,
            FixType::RtkFloat => self.sigma_rtk_float,
            FixType::RtkFixed => self.sigma_rtk_fixed,
        }
    }

    /// Per-draw white-noise level, the part of `sigma` the bias does not supply.
    pub fn noise_sigma(&self, fix: FixType) -> f64 {
        match fix {
            FixType::Gps3d => (self.sigma_gps3d.powi(2) - self.bias_sigma.powi(2)).max(0.0).sqrt(),
            other => self.sigma(other),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_gps3d, self.sigma_rtk_float, self.sigma_rtk_fixed, self.bias_sigma];
        if all.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::param("GPS sigmas must be finite and non-negative"));
        }
        if self.bias_sigma > self.sigma_gps3d {
            return Err(Error::param("bias sigma cannot exceed the total GPS_3D sigma"));
        }
        if !(self.bias_tau_s > 0.0 && self.fix_hold_s >= 0.0 && self.staleness_s > 0.0) {
            return Err(Error::param("GPS time constants must be positive"));
        }
        Ok(())
    }
}

/// Receiver output: truth plus shared bias plus white noise at the regime's
/// level. With a stationary bias the `GPS_3D` error has RMS `sigma_gps3d`.
pub fn gps_measure<R: Rng + ?Sized>(
    state: &RoverState,
    mode: FixType,
    bias: (f64, f64),
    cfg: &GpsConfig,
    rng: &mut R,
) -> Result<GpsFix> {
    if mode == FixType::None {
        return Err(Error::NoFix);
    }
    let sigma = cfg.sigma(mode);
    let axis = cfg.noise_sigma(mode) / std::f64::consts::SQRT_2;
    let (nx, ny) = if axis > 0.0 {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        (axis * a, axis * b)
    } else {
        (0.0, 0.0)
    };
    Ok(GpsFix { fix_type: mode, est: Some((state.x + bias.0 + nx, state.y + bias.1 + ny)), horizontal_sigma_m: sigma })
}

/// One record of the correction stream, also the NDJSON wire record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtkCorrection {
    pub t: f64,
    pub dx: f64,
    pub dy: f64,
}

pub fn base_station_correction(base_known: (f64, f64), base_measured: (f64, f64), t: f64) -> RtkCorrection {
    RtkCorrection { t, dx: base_known.0 - base_measured.0, dy: base_known.1 - base_measured.1 }
}

/// Tracks correction-stream continuity and promotes fixes through the RTK regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct RtkTracker {
    cfg: GpsConfig,
    stream_start: Option<f64>,
    last_corr_t: Option<f64>,
}

impl RtkTracker {
    pub fn new(cfg: GpsConfig) -> Self {
        RtkTracker { cfg, stream_start: None, last_corr_t: None }
    }

    fn update(&mut self, corr: Option<&RtkCorrection>, now: f64) -> Option<FixType> {
        let fresh = corr.filter(|c| c.dx.is_finite() && c.dy.is_finite() && now - c.t <= self.cfg.staleness_s);
        let Some(c) = fresh else {
            self.stream_start = None;
            self.last_corr_t = None;
            return None;
        };
        let continuous = self.last_corr_t.is_some_and(|prev| c.t - prev <= self.cfg.staleness_s);
        if !continuous || self.stream_start.is_none() {
            self.stream_start = Some(c.t);
        }
        self.last_corr_t = Some(self.last_corr_t.map_or(c.t, |p| p.max(c.t)));
        let held = now - self.stream_start.unwrap_or(c.t);
        Some(if held >= self.cfg.fix_hold_s { FixType::RtkFixed } else { FixType::RtkFloat })
    }

    /// Regime the next `apply_correction` call would produce, without mutating.
    pub fn peek(&self, corr: Option<&RtkCorrection>, now: f64) -> FixType {
        self.clone().update(corr, now).unwrap_or(FixType::Gps3d)
    }

    /// Applies a correction to a positioned fix.
    ///
    /// Fresh corrections shift the estimate and upgrade the fix to
    /// `RTK_FLOAT`, then `RTK_FIXED` once the stream has been continuous for
    /// `fix_hold_s`. A stale or missing correction leaves the position alone
    /// and drops any RTK solution back to `GPS_3D`.
    pub fn apply_correction(&mut self, fix: &GpsFix, corr: Option<&RtkCorrection>, now: f64) -> GpsFix {
        let Some((x, y)) = fix.est else {
            return *fix;
        };
        match (self.update(corr, now), corr) {
            (Some(regime), Some(c)) => {
                GpsFix { fix_type: regime, est: Some((x + c.dx, y + c.dy)), horizontal_sigma_m: self.cfg.sigma(regime) }
            }
            _ => {
                let fix_type = match fix.fix_type {
                    FixType::RtkFloat | FixType::RtkFixed => FixType::Gps3d,
                    other => other,
                };
                GpsFix { fix_type, est: fix.est, horizontal_sigma_m: self.cfg.sigma(fix_type) }
            }
        }
    }
}

/// Shared atmospheric bias as a mean-reverting random walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedBias {
    pub bx: f64,
    pub by: f64,
}

impl SharedBias {
    pub fn initial<R: Rng + ?Sized>(cfg: &GpsConfig, rng: &mut R) -> Self {
        let axis = cfg.bias_sigma / std::f64::consts::SQRT_2;
        if axis == 0.0 {
            return SharedBias { bx: 0.0, by: 0.0 };
        }
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        SharedBias { bx: axis * a, by: axis * b }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, cfg: &GpsConfig, dt: f64, rng: &mut R) {
        let axis = cfg.bias_sigma / std::f64::consts::SQRT_2;
        if axis == 0.0 {
            return;
        }
        let decay = (-dt / cfg.bias_tau_s).exp();
        let drive = axis * (1.0 - decay * decay).sqrt();
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        self.bx = self.bx * decay + drive * a;
        self.by = self.by * decay + drive * b;
    }
}

/// Base station at a surveyed position observing the shared bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseStation {
    pub known: (f64, f64),
}

impl BaseStation {
    pub fn correction(&self, bias: &SharedBias, t: f64) -> RtkCorrection {
        let measured = (self.known.0 + bias.bx, self.known.1 + bias.by);
        base_station_correction(self.known, measured, t)
    }
}

/// Rover-side receiver: bias, raw measurement and RTK correction in one place.
#[derive(Debug, Clone)]
pub struct GpsReceiver {
    pub cfg: GpsConfig,
    pub bias: SharedBias,
    tracker: RtkTracker,
}

impl GpsReceiver {
    pub fn new<R: Rng + ?Sized>(cfg: GpsConfig, rng: &mut R) -> Self {
        GpsReceiver { cfg, bias: SharedBias::initial(&cfg, rng), tracker: RtkTracker::new(cfg) }
    }

    /// Steps the shared bias forward by `dt`.
    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        self.bias.step(&self.cfg, dt, rng);
    }

    /// Raw measurement at the regime the correction stream supports, then corrected.
    pub fn measure<R: Rng + ?Sized>(&mut self, state: &RoverState, now: f64, corr: Option<&RtkCorrection>, rng: &mut R) -> GpsFix {
        let regime = self.tracker.peek(corr, now);
        let mut raw = gps_measure(state, regime, (self.bias.bx, self.bias.by), &self.cfg, rng).expect("regime is never NONE");
        raw.fix_type = FixType::Gps3d;
        raw.horizontal_sigma_m = self.cfg.sigma_gps3d;
        self.tracker.apply_correction(&raw, corr, now)
    }
}
