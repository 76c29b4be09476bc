//! Detection expected calibration error (D-ECE).
//!
//! Detections are binned jointly over their confidence and their normalized
//! box parameters `(cx, cy, w, h)`. Each occupied cell contributes the gap
//! between its precision (fraction of true positives) and its mean
//! confidence, weighted by the share of detections it holds.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{match_to_gt, Detection, GtBox};

/// Number of binned dimensions: score, cx, cy, w, h.
pub const DIMS: usize = 5;
pub const DIM_NAMES: [&str; DIMS] = ["score", "cx", "cy", "w", "h"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeceConfig {
    /// Equal-width bins per dimension, in [`DIM_NAMES`] order.
    pub bins: [usize; DIMS],
    /// IoU needed for a detection to count as a true positive.
    pub iou_thresh: f64,
}

impl Default for DeceConfig {
    fn default() -> Self {
        Self {
            bins: [10, 5, 5, 5, 5],
            iou_thresh: 0.5,
        }
    }
}

impl DeceConfig {
    pub fn total_cells(&self) -> usize {
        self.bins.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if let Some(k) = self.bins.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "bin count for {} must be at least 1",
                DIM_NAMES[k]
            )));
        }
        Ok(())
    }
}

/// One detection prepared for calibration: score, box center and size
/// normalized by image width/height, and its TP flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibSample {
    pub values: [f64; DIMS],
    pub tp: bool,
}

impl CalibSample {
    pub fn new(det: &Detection, tp: bool, width: usize, height: usize) -> Self {
        let (cx, cy) = det.bbox.center();
        let (w, h) = (width as f64, height as f64);
        Self {
            values: [det.score, cx / w, cy / h, det.bbox.width() / w, det.bbox.height() / h],
            tp,
        }
    }

    pub fn score(&self) -> f64 {
        self.values[0]
    }
}

/// Matches one frame and returns its calibration samples in detection order.
pub fn frame_samples(
    dets: &[Detection],
    gts: &[GtBox],
    width: usize,
    height: usize,
    iou_thresh: f64,
) -> Vec<CalibSample> {
    let m = match_to_gt(dets, gts, iou_thresh);
    dets.iter()
        .enumerate()
        .map(|(i, d)| CalibSample::new(d, m.is_tp(i), width, height))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellDiagnostic {
    /// Bin index per dimension.
    pub cell: [usize; DIMS],
    pub count: usize,
    pub conf: f64,
    pub prec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeceResult {
    /// D-ECE binned on one dimension at a time, in [`DIM_NAMES`] order.
    pub marginal: [f64; DIMS],
    /// D-ECE over the Cartesian product of all bins; the headline number.
    pub joint: f64,
    /// Occupied cells of the joint binning, in ascending cell order.
    pub cells: Vec<CellDiagnostic>,
    pub detections: usize,
    /// Number of coordinates clamped into [0, 1].
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    count: usize,
    conf_sum: f64,
    tp: usize,
}

impl Acc {
    fn push(&mut self, s: &CalibSample) {
        self.count += 1;
        self.conf_sum += s.values[0];
        self.tp += s.tp as usize;
    }

    fn conf(&self) -> f64 {
        self.conf_sum / self.count as f64
    }

    fn prec(&self) -> f64 {
        self.tp as f64 / self.count as f64
    }

    fn term(&self, total: usize) -> f64 {
        (self.count as f64 / total as f64) * (self.prec() - self.conf()).abs()
    }
}

#[inline]
fn edge(i: usize, n: usize) -> f64 {
    i as f64 / n as f64
}

/// Bin of `v ∈ [0, 1]` among `n` equal-width bins `[lo, hi)`, last bin closed.
#[inline]
fn bin_of(v: f64, n: usize) -> usize {
    let mut i = ((v * n as f64) as usize).min(n - 1);
    // the product can round across an edge; the edges are authoritative
    while i > 0 && v < edge(i, n) {
        i -= 1;
    }
    while i + 1 < n && v >= edge(i + 1, n) {
        i += 1;
    }
    i
}

fn clamp_samples(samples: &[CalibSample]) -> (Vec<CalibSample>, usize) {
    let mut clamped = 0;
    let out = samples
        .iter()
        .map(|s| {
            let mut s = *s;
            for v in &mut s.values {
                if !(0.0..=1.0).contains(v) {
                    clamped += 1;
                    *v = v.clamp(0.0, 1.0);
                }
            }
            s
        })
        .collect();
    (out, clamped)
}

fn cell_index(cell: &[usize; DIMS], bins: &[usize; DIMS]) -> usize {
    cell.iter().zip(bins).fold(0, |acc, (&c, &n)| acc * n + c)
}

pub fn dece(samples: &[CalibSample], cfg: &DeceConfig) -> Result<DeceResult> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::ZeroDetections);
    }
    let (samples, clamped) = clamp_samples(samples);
    let total = samples.len();

    let mut marginal_acc: Vec<Vec<Acc>> = cfg.bins.iter().map(|&n| vec![Acc::default(); n]).collect();
    let mut joint_acc: BTreeMap<usize, ([usize; DIMS], Acc)> = BTreeMap::new();
    for s in &samples {
        let mut cell = [0usize; DIMS];
        for k in 0..DIMS {
            cell[k] = bin_of(s.values[k], cfg.bins[k]);
            marginal_acc[k][cell[k]].push(s);
        }
        joint_acc
            .entry(cell_index(&cell, &cfg.bins))
            .or_insert((cell, Acc::default()))
            .1
            .push(s);
    }

    let mut marginal = [0.0; DIMS];
    for (k, accs) in marginal_acc.iter().enumerate() {
        marginal[k] = accs.iter().filter(|a| a.count > 0).map(|a| a.term(total)).sum();
    }
    let joint = joint_acc.values().map(|(_, a)| a.term(total)).sum();
    let cells = joint_acc
        .values()
        .map(|(cell, a)| CellDiagnostic {
            cell: *cell,
            count: a.count,
            conf: a.conf(),
            prec: a.prec(),
        })
        .collect();
    Ok(DeceResult {
        marginal,
        joint,
        cells,
        detections: total,
        clamped,
    })
}

/// Reference D-ECE: walks every cell and tests every detection for
/// membership against the bin edges directly. Quadratic; meant for
/// verification on small inputs.
pub fn dece_oracle(samples: &[CalibSample], cfg: &DeceConfig) -> Result<DeceResult> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::ZeroDetections);
    }
    let (samples, clamped) = clamp_samples(samples);
    let total = samples.len();
    let inside = |v: f64, i: usize, n: usize| {
        let (lo, hi) = (edge(i, n), edge(i + 1, n));
        v >= lo && (v < hi || (i == n - 1 && v <= hi))
    };

    let mut marginal = [0.0; DIMS];
    for k in 0..DIMS {
        let n = cfg.bins[k];
        let mut sum = 0.0;
        for i in 0..n {
            let mut acc = Acc::default();
            for s in samples.iter().filter(|s| inside(s.values[k], i, n)) {
                acc.push(s);
            }
            if acc.count > 0 {
                sum += acc.term(total);
            }
        }
        marginal[k] = sum;
    }

    let mut joint = 0.0;
    let mut cells = Vec::new();
    for flat in 0..cfg.total_cells() {
        let mut cell = [0usize; DIMS];
        let mut rest = flat;
        for k in (0..DIMS).rev() {
            cell[k] = rest % cfg.bins[k];
            rest /= cfg.bins[k];
        }
        let mut acc = Acc::default();
        for s in &samples {
            if (0..DIMS).all(|k| inside(s.values[k], cell[k], cfg.bins[k])) {
                acc.push(s);
            }
        }
        if acc.count > 0 {
            joint += acc.term(total);
            cells.push(CellDiagnostic {
                cell,
                count: acc.count,
                conf: acc.conf(),
                prec: acc.prec(),
            });
        }
    }
    Ok(DeceResult {
        marginal,
        joint,
        cells,
        detections: total,
        clamped,
    })
}
