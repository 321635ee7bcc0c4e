//! `agro` command line: run, serve, eval, prep, replay.
//!
//! Exit codes: 0 success, 1 usage (bad flags, missing files), 2 domain
//! failure (pre-arm refusal, mission not completed, bad input data).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mission::{export_geotags, GeotagFormat, MissionPlan};
use crate::sim::{run_mission, run_service, summarize, MissionSummary, Scenario, ServiceOptions, SimConfig, Simulation};
use crate::telemetry::{read_log, CorrectionServer, TelemetryLog, TelemetryServer};
use crate::world::{FieldMap, RoverState};
use crate::yieldkit::io::{read_label_dir, Dataset};
use crate::yieldkit::prep::{prepare, PrepOptions};
use crate::yieldkit::split::StrataBins;
use crate::yieldkit::{evaluate, EvalConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DOMAIN: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "agro", version, about = "Agricultural rover mission simulator and detection-evaluation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a mission headless and write its artifacts.
    Run(RunArgs),
    /// Serve live telemetry and accept operator commands.
    Serve(ServeArgs),
    /// Score prediction labels against ground truth.
    Eval(EvalArgs),
    /// Tile, crop negatives, augment and split a dataset.
    Prep(PrepArgs),
    /// Recompute a mission summary from a telemetry log.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub world: PathBuf,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// RTK corrections on or off.
    #[arg(long, action = ArgAction::Set)]
    pub rtk: Option<bool>,
    /// Horizontal RMS error of the uncorrected GPS, meters.
    #[arg(long)]
    pub gps_sigma: Option<f64>,
    /// Injected battery voltage.
    #[arg(long)]
    pub battery_v: Option<f64>,
    /// Start pose `x,y,heading_deg`.
    #[arg(long, value_parser = parse_pose)]
    pub start: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub mission: PathBuf,
    /// Also broadcast frames on this TCP port while running.
    #[arg(long)]
    pub telemetry_port: Option<u16>,
    /// Simulated RC transmitter loss time, seconds.
    #[arg(long)]
    pub rc_loss_at: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Mission preloaded before clients connect.
    #[arg(long)]
    pub mission: Option<PathBuf>,
    #[arg(long, default_value_t = 5760)]
    pub telemetry_port: u16,
    /// Also serve the RTK correction stream on this port.
    #[arg(long)]
    pub correction_port: Option<u16>,
    /// Stop after this many simulated seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Run as fast as possible instead of in wall-clock time.
    #[arg(long)]
    pub fast: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub conf_thr: f64,
    #[arg(long, default_value_t = 0.70)]
    pub iou_thr: f64,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tile grid `COLSxROWS`, e.g. `3x2`.
    #[arg(long, value_parser = parse_grid)]
    pub tile: Option<(u32, u32)>,
    /// Emit one background crop per annotated image.
    #[arg(long)]
    pub negatives: bool,
    /// Augmented copies per image.
    #[arg(long, default_value_t = 0)]
    pub augment: usize,
    /// Assign train/val/test splits.
    #[arg(long)]
    pub split: bool,
    #[arg(long, value_parser = parse_ratios, default_value = "0.8,0.1,0.1")]
    pub ratios: [f64; 3],
    /// Stratum upper bounds on ground-truth count.
    #[arg(long, value_delimiter = ',', default_value = "0,20,50")]
    pub bins: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Write the summary here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_pose(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected x,y,heading_deg".to_string())
}

fn parse_grid(s: &str) -> std::result::Result<(u32, u32), String> {
    let (c, r) = s.split_once(['x', 'X']).ok_or("expected COLSxROWS")?;
    Ok((c.parse().map_err(|e| format!("{e}"))?, r.parse().map_err(|e| format!("{e}"))?))
}

fn parse_ratios(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected three ratios".to_string())
}

/// Run configuration file. Everything is optional; flags win.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: Option<SimConfig>,
    pub seed: Option<u64>,
    pub rtk: Option<bool>,
    pub gps_sigma: Option<f64>,
    pub battery_v: Option<f64>,
    /// `[x, y, heading_deg]`.
    pub start: Option<[f64; 3]>,
    pub scenario: Option<Scenario>,
}

/// Everything a simulation needs, after merging flags, file and defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub world: FieldMap,
    pub cfg: SimConfig,
    pub start: RoverState,
    pub scenario: Scenario,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError { code: EXIT_USAGE, msg: msg.into() }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
            _ => EXIT_DOMAIN,
        };
        CliError { code, msg: e.to_string() }
    }
}

fn require_file(p: &Path, what: &str) -> std::result::Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} file not found: {}", p.display())))
    }
}

pub fn resolve(a: &SimArgs) -> std::result::Result<Resolved, CliError> {
    require_file(&a.world, "world")?;
    let file: RunConfig = match &a.config {
        Some(p) => {
            require_file(p, "config")?;
            serde_json::from_str(&fs::read_to_string(p).map_err(Error::from)?).map_err(|e| usage(format!("config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let world = FieldMap::load(&a.world)?;
    let mut cfg = file.sim.unwrap_or_default();
    cfg.seed = a.seed.or(file.seed).ok_or_else(|| usage("--seed is required (flag or config file)"))?;
    if let Some(rtk) = a.rtk.or(file.rtk) {
        cfg.rtk = rtk;
    }
    if let Some(s) = a.gps_sigma.or(file.gps_sigma) {
        if !(s >= 0.0) {
            return Err(usage("--gps-sigma must be non-negative"));
        }
        cfg.gps.sigma_gps3d = s;
        // The bias is part of the total; a tighter total caps it.
        cfg.gps.bias_sigma = cfg.gps.bias_sigma.min(s);
    }
    let [x, y, h] = a.start.or(file.start).unwrap_or([1.0, 1.0, 0.0]);
    let mut start = RoverState::at(x, y, h.to_radians());
    if let Some(v) = a.battery_v.or(file.battery_v) {
        start.battery_v = v;
    }
    Ok(Resolved { world, cfg, start, scenario: file.scenario.unwrap_or_default() })
}

fn write_mission_artifacts(out: &Path, r: &Resolved, outcome: &crate::sim::RunOutcome) -> Result<()> {
    let anchor = r.world.origin_geo.as_ref();
    fs::write(out.join("geotags.csv"), export_geotags(&outcome.geotags, GeotagFormat::Csv, anchor)?)?;
    fs::write(out.join("geotags.geojson"), export_geotags(&outcome.geotags, GeotagFormat::GeoJson, anchor)? + "\n")?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&outcome.summary)? + "\n")?;
    Ok(())
}

fn cmd_run(a: &RunArgs) -> std::result::Result<i32, CliError> {
    let mut r = resolve(&a.sim)?;
    require_file(&a.mission, "mission")?;
    let plan = MissionPlan::load(&a.mission, r.world.origin_geo.as_ref(), &r.cfg.vehicle)?;
    if a.rc_loss_at.is_some() {
        r.scenario.rc_loss_at = a.rc_loss_at;
    }
    fs::create_dir_all(&a.sim.out).map_err(Error::from)?;
    let mut log = TelemetryLog::create(a.sim.out.join("telemetry.ndjson"))?;
    let server = match a.telemetry_port {
        Some(p) => Some(TelemetryServer::bind(("127.0.0.1", p))?),
        None => None,
    };
    let outcome = run_mission(&r.world, &plan, r.start, r.cfg, &r.scenario, false, |f, _| {
        if let Some(s) = &server {
            s.broadcast_frame(f);
        }
        log.record(f)
    });
    log.flush()?;
    let outcome = match outcome {
        Err(Error::ArmRefused(fails)) => {
            eprintln!("pre-arm failed:");
            for f in &fails {
                eprintln!("  {f}");
            }
            return Ok(EXIT_DOMAIN);
        }
        other => other?,
    };
    write_mission_artifacts(&a.sim.out, &r, &outcome)?;
    println!("{}", serde_json::to_string_pretty(&outcome.summary).map_err(Error::from)?);
    if outcome.completed() {
        Ok(EXIT_OK)
    } else {
        eprintln!("mission ended in {:?}", outcome.summary.final_mode);
        Ok(EXIT_DOMAIN)
    }
}

fn cmd_serve(a: &ServeArgs) -> std::result::Result<i32, CliError> {
    let r = resolve(&a.sim)?;
    let mut sim = Simulation::new(r.world.clone(), &r.scenario.unmapped, r.start, r.cfg)?;
    if let Some(p) = &a.mission {
        require_file(p, "mission")?;
        sim.upload(MissionPlan::load(p, r.world.origin_geo.as_ref(), &r.cfg.vehicle)?)?;
    }
    let server = TelemetryServer::bind(("127.0.0.1", a.telemetry_port))?;
    let corrections = match a.correction_port {
        Some(p) => Some(CorrectionServer::bind(("127.0.0.1", p))?),
        None => None,
    };
    eprintln!("telemetry on {}", server.local_addr());
    if let Some(c) = &corrections {
        eprintln!("corrections on {}", c.local_addr());
    }
    fs::create_dir_all(&a.sim.out).map_err(Error::from)?;
    let mut log = TelemetryLog::create(a.sim.out.join("telemetry.ndjson"))?;
    let opts = ServiceOptions { time_scale: (!a.fast).then_some(1.0), max_duration_s: a.duration, stop: None };
    run_service(&mut sim, &server, corrections.as_ref(), Some(&mut log), &opts)?;
    log.flush()?;
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs) -> std::result::Result<i32, CliError> {
    for (p, what) in [(&a.gt, "ground truth"), (&a.pred, "prediction")] {
        if !p.is_dir() {
            return Err(usage(format!("{what} directory not found: {}", p.display())));
        }
    }
    let cfg = EvalConfig { confidence_threshold: a.conf_thr, iou_threshold: a.iou_thr };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let gt = read_label_dir(&a.gt, false)?;
    let pred = read_label_dir(&a.pred, true)?;
    if gt.is_empty() {
        return Err(CliError { code: EXIT_DOMAIN, msg: "no ground-truth label files".into() });
    }
    if !pred.is_empty() && !pred.keys().any(|k| gt.contains_key(k)) {
        return Err(CliError { code: EXIT_DOMAIN, msg: "no prediction file matches a ground-truth image id".into() });
    }
    let report = evaluate(&gt, &pred, &cfg)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    let c = report.confusion;
    eprintln!("               actual+  background");
    eprintln!("predicted+  {:>10} {:>11}", c.tp, c.fp);
    eprintln!("background  {:>10} {:>11}", c.fn_, c.tn());
    match report.accuracy_pct {
        Some(acc) => eprintln!("accuracy {acc:.2}%"),
        None => eprintln!("accuracy undefined"),
    }
    match &a.out {
        Some(p) => fs::write(p, json).map_err(Error::from)?,
        None => print!("{json}"),
    }
    Ok(EXIT_OK)
}

fn cmd_prep(a: &PrepArgs) -> std::result::Result<i32, CliError> {
    if !a.input.join(crate::yieldkit::io::MANIFEST).is_file() {
        return Err(usage(format!("no manifest.json in {}", a.input.display())));
    }
    let ds = Dataset::load(&a.input)?;
    let opts = PrepOptions {
        tile: a.tile,
        negatives: a.negatives,
        augment_copies: a.augment,
        split: a.split.then(|| (a.ratios, StrataBins { upper: a.bins.clone() })),
        seed: a.seed,
    };
    let out = prepare(ds, &opts)?;
    out.write(&a.out)?;
    for op in &out.manifest.operations {
        if let crate::yieldkit::io::Operation::Split { warning: Some(w), .. } = op {
            eprintln!("warning: {w}");
        }
    }
    eprintln!("{} images written to {}", out.images.len(), a.out.display());
    Ok(EXIT_OK)
}

fn cmd_replay(a: &ReplayArgs) -> std::result::Result<i32, CliError> {
    require_file(&a.log, "log")?;
    let frames = read_log(&a.log)?;
    let summary: MissionSummary = summarize(&frames);
    let json = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    if let Some(p) = &a.out {
        fs::write(p, &json).map_err(Error::from)?;
    }
    print!("{json}");
    Ok(EXIT_OK)
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let res = match &cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Prep(a) => cmd_prep(a),
        Cmd::Replay(a) => cmd_replay(a),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {}", e.msg);
        e.code
    })
}

/// Parses `std::env::args` and runs. Usage errors exit 1, not clap's 2.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
