//! Agricultural rover mission simulator and yield-evaluation toolkit.
//!
//! The simulator side covers the field model and Ackermann kinematics
//! ([`world`]), simulated LiDAR and RTK-corrected GPS ([`sensors`]), grid
//! planning plus reactive BendyRuler avoidance ([`nav`]), the pre-arm and
//! mission state machine with geotagged capture ([`mission`], [`sim`]) and
//! the NDJSON telemetry/command service ([`telemetry`]).
//!
//! The evaluation side ([`yieldkit`]) prepares detection datasets (tiling,
//! negative crops, augmentation, stratified splits) and scores detections
//! (IoU matching, confusion matrix, accuracy, AP and mAP, yield counts).
//!
//! Runnable walkthroughs live in `examples/`; the `agro` binary wraps the
//! same functionality as `run`, `serve`, `eval`, `prep` and `replay`.

pub mod cli;
pub mod error;
pub mod mission;
pub mod nav;
pub mod rng;
pub mod sensors;
pub mod sim;
pub mod telemetry;
pub mod world;
pub mod yieldkit;

pub use error::{Error, Result};
