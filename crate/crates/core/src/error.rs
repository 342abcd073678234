use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The annotation bytes are not valid JSON.
    #[error("malformed input at line {line}, column {column}: {message}")]
    MalformedInput {
        line: usize,
        column: usize,
        message: String,
    },

    /// Valid JSON that does not follow the annotation schema.
    #[error("schema violation at {location}: {message}")]
    SchemaViolation { location: String, message: String },

    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),

    #[error("polygon has {0} vertices, at least 3 are required")]
    DegeneratePolygon(usize),

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },

    #[error("invalid run-length encoding: {0}")]
    InvalidRle(String),

    #[error("box must have positive width and height, got {w}x{h}")]
    NonPositiveBox { w: f64, h: f64 },

    #[error("length mismatch: {boxes} boxes but {scores} scores")]
    LengthMismatch { boxes: usize, scores: usize },

    #[error("region of interest lies entirely outside the {width}x{height} feature grid")]
    RoiOutsideGrid { width: usize, height: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("detection for image `{image_id}` cannot be compared at the requested IoU level: {message}")]
    GeometryMismatch { image_id: String, message: String },

    #[error("no ground-truth instances to evaluate against")]
    NoGroundTruth,
}
