//! Non-learned core of a drivable-area detection pipeline.
//!
//! * [`dataset`]: BDD-style annotation ingestion, class normalization and frame filtering.
//! * [`geometry`]: polygon rasterization, masks, RLE and IoU.
//! * [`proposals`]: anchors, box deltas, NMS, RoIPool and RoIAlign.
//! * [`metrics`]: detection matching, interpolated AP/mAP and stratified reports.
//! * [`synth`]: synthetic road scenes, corrupted predictions and a brute-force mAP oracle.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod proposals;
pub mod synth;

pub use error::{Error, Result};
