//! Parsing and serialization of every external artifact.
//!
//! | artifact | format |
//! |---|---|
//! | detections, ground truth, grad-loss scalars | JSON Lines, one frame (or frame-pass) per line |
//! | segmentation maps | binary PGM `P5`, labels 0 = sky, 1 = tree, 2 = ground |
//! | feature vectors | `FVEC1` binary plus a JSON sidecar of frame ids |
//! | reports | CSV (header row, `.` decimal separator, LF) and JSON |

mod fvec;
mod pgm;
mod records;
mod report;

pub use fvec::{
    decode_features, encode_features, read_features, sidecar_path, write_features,
    FeatureVectorSet, FVEC_MAGIC,
};
pub use pgm::{
    decode_pgm16, decode_segmap, encode_pgm16, encode_segmap, read_segmap, write_segmap, BgLabel,
    SegMapImage,
};
pub use records::{
    group_by_frame, parse_detections, parse_grad_loss, parse_ground_truth, read_detections,
    read_grad_loss, read_ground_truth, write_detections, write_grad_loss, write_ground_truth,
    write_json_lines, DetectionRecord, FramePasses, GradLoss, GradLossRecord, GroundTruthRecord,
};
pub use report::{csv_writer, format_cell, write_json_pretty};
