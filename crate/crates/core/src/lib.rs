//! Evaluation toolkit for object detectors under domain shift: MC-dropout
//! uncertainty maps, per-list MCDO-NMS uncertainty, detection calibration
//! error, background-conditioned AP, cross-domain shift analysis and a small
//! adversarial-alignment simulation, all driven by deterministic synthetic
//! fixtures.
//!
//! ```
//! use driftbench::{iou, BBox};
//!
//! let a = BBox::new(0.0, 0.0, 2.0, 2.0)?;
//! let b = BBox::new(1.0, 0.0, 3.0, 2.0)?;
//! assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
//! # Ok::<(), driftbench::Error>(())
//! ```

pub mod bgmetrics;
pub mod calibration;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod mcdo_nms;
pub mod rng;
pub mod scoremap;
pub mod shift;
pub mod synthgen;
pub mod uda;

pub use error::{Error, Result};
pub use geometry::{iou, BBox, Detection, GtBox, NmsConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/background-ap.md")]
    mod background_ap {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/uncertainty-maps.md")]
    mod uncertainty_maps {}
    #[doc = include_str!("../../../book/src/mcdo-nms.md")]
    mod mcdo_nms {}
    #[doc = include_str!("../../../book/src/shift-analysis.md")]
    mod shift_analysis {}
    #[doc = include_str!("../../../book/src/uda.md")]
    mod uda {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
