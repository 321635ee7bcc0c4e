use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no GPS fix available")]
    NoFix,

    #[error("start or goal cell is occupied: {0}")]
    InvalidEndpoint(String),

    #[error("no path between start and goal")]
    NoPath,

    #[error("arming refused: {}", .0.join(", "))]
    ArmRefused(Vec<String>),

    #[error("illegal state transition {from} -> {to}")]
    InvalidTransition { from: String, to: String },

    #[error("geotag record rejected: {0}")]
    RecordRejected(String),

    #[error("no empty region remains")]
    EmptyResult,

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("invalid mission: {0}")]
    InvalidMission(String),

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("{}:{line}: {msg}", .file.display())]
    Parse { file: PathBuf, line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
