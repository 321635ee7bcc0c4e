//! Detection dataset preparation and evaluation.
//!
//! Boxes are single-class and normalized to the image. Preparation covers
//! tiling, background crops, photometric augmentation and a stratified
//! train/val/test split; evaluation covers greedy matching, the confusion
//! matrix, accuracy, AP and mAP, and per-location yield counts.

pub mod augment;
pub mod boxes;
pub mod io;
pub mod metrics;
pub mod prep;
pub mod report;
pub mod split;
pub mod tiling;

pub use augment::{augment, AugmentParams};
pub use boxes::{iou, AnnotatedImage, BoundingBox};
pub use metrics::{accuracy, average_precision, map_iou_grid, map_range, match_detections, ConfusionMatrix, EvalConfig, MatchResult};
pub use report::{evaluate, yield_count, EvalReport, YieldReport};
pub use split::{stratified_split, SplitAssignment, StrataBins};
pub use tiling::{largest_empty_rect, split_tiles, Rect, Tile};
