use std::io;

use thiserror::Error;

/// Errors produced by the toolkit.
///
/// Parsing errors carry enough location information (line number, frame id,
/// byte offset) to find the offending record without re-reading the file.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },

    #[error("line {line}: frame {frame_id:?} pass {pass_id}: {message}")]
    InvalidDetection {
        line: usize,
        frame_id: String,
        pass_id: u32,
        message: String,
    },

    #[error("line {line}: frame {frame_id:?}: {message}")]
    InvalidRecord {
        line: usize,
        frame_id: String,
        message: String,
    },

    #[error("line {line}: duplicate record for frame {frame_id:?} pass {pass_id}")]
    DuplicatePass {
        line: usize,
        frame_id: String,
        pass_id: u32,
    },

    #[error("line {line}: duplicate record for frame {frame_id:?}")]
    DuplicateFrame { line: usize, frame_id: String },

    #[error("byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("degenerate box [{x1}, {y1}, {x2}, {y2}]")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("zero detections")]
    ZeroDetections,

    #[error("empty rasterization")]
    EmptyRasterization,

    #[error("undefined normalization: reference value is zero")]
    UndefinedNormalization,

    #[error("degenerate series: zero variance")]
    DegenerateSeries,

    #[error("empty feature set")]
    EmptyFeatureSet,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
