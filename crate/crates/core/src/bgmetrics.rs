//! Average precision and background-wise metric splits.
//!
//! Every detection and every ground-truth box is assigned the background
//! label held by most of its pixels in the frame's segmentation map. A
//! metric for one background is the metric computed on that background's
//! detections against that background's ground truth; totals are computed
//! on the unsplit data, never as a mean of the splits.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::calibration::{dece, CalibSample, DeceConfig};
use crate::error::{Error, Result};
use crate::geometry::{match_to_gt, rasterize, score_order, BBox, Detection, GtBox};

pub use crate::formats::{BgLabel, SegMapImage};

/// Majority background label under the box. Ties resolve tree, then ground,
/// then sky.
pub fn bg_of_box(b: &BBox, seg: &SegMapImage) -> Result<BgLabel> {
    let rect = rasterize(b, seg.height(), seg.width());
    if rect.is_empty() {
        return Err(Error::EmptyRasterization);
    }
    let mut counts = [0usize; 3];
    let w = seg.width();
    let labels = seg.labels();
    for y in rect.y0..rect.y1 {
        for &l in &labels[y * w + rect.x0..y * w + rect.x1] {
            counts[l.index()] += 1;
        }
    }
    let mut best = BgLabel::Tree;
    for l in [BgLabel::Ground, BgLabel::Sky] {
        if counts[l.index()] > counts[best.index()] {
            best = l;
        }
    }
    Ok(best)
}

/// Index lists of detections and GT boxes per background.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BgPartition {
    pub dets: [Vec<usize>; 3],
    pub gts: [Vec<usize>; 3],
}

pub fn split_by_bg(dets: &[Detection], gts: &[GtBox], seg: &SegMapImage) -> Result<BgPartition> {
    let mut p = BgPartition::default();
    for (i, d) in dets.iter().enumerate() {
        p.dets[bg_of_box(&d.bbox, seg)?.index()].push(i);
    }
    for (i, g) in gts.iter().enumerate() {
        p.gts[bg_of_box(&g.bbox, seg)?.index()].push(i);
    }
    Ok(p)
}

/// A scored detection after matching, tagged with the keys that fix its
/// position in the pooled ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub score: f64,
    pub class_id: u32,
    pub tp: bool,
    pub frame: usize,
    /// Position of the detection in its frame's score order.
    pub rank: usize,
}

fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.frame.cmp(&b.frame))
        .then(a.rank.cmp(&b.rank))
}

/// Matches one frame and returns its hits plus per-class GT counts.
pub fn frame_hits(
    frame: usize,
    dets: &[Detection],
    gts: &[GtBox],
    iou_thresh: f64,
) -> (Vec<Hit>, BTreeMap<u32, usize>) {
    let m = match_to_gt(dets, gts, iou_thresh);
    let hits = score_order(dets)
        .into_iter()
        .enumerate()
        .map(|(rank, i)| Hit {
            score: dets[i].score,
            class_id: dets[i].class_id,
            tp: m.is_tp(i),
            frame,
            rank,
        })
        .collect();
    let mut counts = BTreeMap::new();
    for g in gts {
        *counts.entry(g.class_id).or_insert(0) += 1;
    }
    (hits, counts)
}

/// All-points AP of one ranked list of TP flags: the mean, over ground-truth
/// objects, of the precision envelope (running maximum from the right) at
/// the rank where each object was recalled. Unrecalled objects count 0.
pub fn ap_from_ranked(tp_flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut envelope: Vec<f64> = tp_flags
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += hit as usize;
            tp as f64 / (k + 1) as f64
        })
        .collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let sum: f64 = tp_flags
        .iter()
        .zip(&envelope)
        .filter(|(hit, _)| **hit)
        .fold(0.0, |acc, (_, p)| acc + p);
    sum / n_gt as f64
}

/// AP from pooled hits: per-class all-points AP averaged over the classes
/// that have ground truth. Absent when there is no ground truth at all.
pub fn ap_from_hits(hits: &[Hit], gt_counts: &BTreeMap<u32, usize>) -> Option<f64> {
    let classes: Vec<(u32, usize)> = gt_counts
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(&c, &n)| (c, n))
        .collect();
    if classes.is_empty() {
        return None;
    }
    let mut sorted = hits.to_vec();
    sorted.sort_by(hit_order);
    let sum: f64 = classes
        .iter()
        .map(|&(c, n)| {
            let flags: Vec<bool> = sorted.iter().filter(|h| h.class_id == c).map(|h| h.tp).collect();
            ap_from_ranked(&flags, n)
        })
        .sum();
    Some(sum / classes.len() as f64)
}

/// AP at `iou_thresh` over frames of `(detections, ground truth)`.
pub fn average_precision<D, G>(frames: &[(D, G)], iou_thresh: f64) -> Option<f64>
where
    D: AsRef<[Detection]>,
    G: AsRef<[GtBox]>,
{
    let mut hits = Vec::new();
    let mut counts = BTreeMap::new();
    for (f, (d, g)) in frames.iter().enumerate() {
        let (h, c) = frame_hits(f, d.as_ref(), g.as_ref(), iou_thresh);
        hits.extend(h);
        for (k, v) in c {
            *counts.entry(k).or_insert(0) += v;
        }
    }
    ap_from_hits(&hits, &counts)
}

/// Matched data of one partition (or of the whole frame).
#[derive(Debug, Clone, Default)]
pub struct PartData {
    pub hits: Vec<Hit>,
    pub gt_counts: BTreeMap<u32, usize>,
    pub samples: Vec<CalibSample>,
}

impl PartData {
    fn merge(&mut self, other: PartData) {
        self.hits.extend(other.hits);
        for (k, v) in other.gt_counts {
            *self.gt_counts.entry(k).or_insert(0) += v;
        }
        self.samples.extend(other.samples);
    }

    fn from_frame(frame: usize, dets: &[Detection], gts: &[GtBox], seg: &SegMapImage, iou: f64) -> Self {
        let (hits, gt_counts) = frame_hits(frame, dets, gts, iou);
        let mut samples = vec![None; dets.len()];
        for (rank, i) in score_order(dets).into_iter().enumerate() {
            samples[i] = Some(CalibSample::new(&dets[i], hits[rank].tp, seg.width(), seg.height()));
        }
        Self {
            hits,
            gt_counts,
            samples: samples.into_iter().flatten().collect(),
        }
    }
}

/// Per-frame contribution: index 0..3 by [`BgLabel`], index 3 the total.
#[derive(Debug, Clone, Default)]
pub struct FrameContribution {
    pub parts: [PartData; 4],
}

const TOTAL: usize = 3;

/// Matches one frame in total and within each background partition.
pub fn evaluate_frame(
    frame: usize,
    dets: &[Detection],
    gts: &[GtBox],
    seg: &SegMapImage,
    iou_thresh: f64,
) -> Result<FrameContribution> {
    let part = split_by_bg(dets, gts, seg)?;
    let mut out = FrameContribution::default();
    for bg in BgLabel::ALL {
        let d: Vec<Detection> = part.dets[bg.index()].iter().map(|&i| dets[i]).collect();
        let g: Vec<GtBox> = part.gts[bg.index()].iter().map(|&i| gts[i]).collect();
        out.parts[bg.index()] = PartData::from_frame(frame, &d, &g, seg, iou_thresh);
    }
    out.parts[TOTAL] = PartData::from_frame(frame, dets, gts, seg, iou_thresh);
    Ok(out)
}

/// One metric across backgrounds. `None` marks an undefined cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BgRow {
    pub total: Option<f64>,
    pub sky: Option<f64>,
    pub tree: Option<f64>,
    pub ground: Option<f64>,
}

impl BgRow {
    pub fn get(&self, bg: BgLabel) -> Option<f64> {
        match bg {
            BgLabel::Sky => self.sky,
            BgLabel::Tree => self.tree,
            BgLabel::Ground => self.ground,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BgReport {
    pub ap: BgRow,
    pub dece: BgRow,
    pub frames: usize,
    /// Frames dropped because no segmentation map was available.
    pub excluded_frames: usize,
}

/// Which metrics a report computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSelection {
    pub ap: bool,
    pub dece: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self { ap: true, dece: true }
    }
}

/// Accumulates frame contributions; merge order does not affect the result.
#[derive(Debug, Clone, Default)]
pub struct BgAccumulator {
    parts: [PartData; 4],
    frames: usize,
    excluded: usize,
}

impl BgAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn merge(&mut self, c: FrameContribution) {
        for (mine, theirs) in self.parts.iter_mut().zip(c.parts) {
            mine.merge(theirs);
        }
        self.frames += 1;
    }

    pub fn exclude_frame(&mut self) {
        self.excluded += 1;
    }

    /// Report the selected metrics. With `sky_only`, tree and ground cells
    /// are left absent.
    pub fn report(&self, metrics: MetricSelection, dece_cfg: &DeceConfig, sky_only: bool) -> BgReport {
        let ap_of = |p: &PartData| {
            if metrics.ap {
                ap_from_hits(&p.hits, &p.gt_counts)
            } else {
                None
            }
        };
        let dece_of = |p: &PartData| {
            if metrics.dece {
                // zero detections leaves the cell undefined
                dece(&p.samples, dece_cfg).ok().map(|r| r.joint)
            } else {
                None
            }
        };
        let row = |f: &dyn Fn(&PartData) -> Option<f64>| BgRow {
            total: f(&self.parts[TOTAL]),
            sky: f(&self.parts[BgLabel::Sky.index()]),
            tree: if sky_only { None } else { f(&self.parts[BgLabel::Tree.index()]) },
            ground: if sky_only { None } else { f(&self.parts[BgLabel::Ground.index()]) },
        };
        BgReport {
            ap: row(&ap_of),
            dece: row(&dece_of),
            frames: self.frames,
            excluded_frames: self.excluded,
        }
    }
}

/// One frame of evaluation input.
#[derive(Debug, Clone, Copy)]
pub struct EvalFrame<'a> {
    pub dets: &'a [Detection],
    pub gts: &'a [GtBox],
    pub seg: Option<&'a SegMapImage>,
}

/// Sequential convenience wrapper over [`evaluate_frame`] and [`BgAccumulator`].
pub fn bg_report(
    frames: &[EvalFrame<'_>],
    iou_thresh: f64,
    metrics: MetricSelection,
    dece_cfg: &DeceConfig,
    sky_only: bool,
) -> Result<BgReport> {
    let mut acc = BgAccumulator::new();
    for (i, f) in frames.iter().enumerate() {
        match f.seg {
            Some(seg) => acc.merge(evaluate_frame(i, f.dets, f.gts, seg, iou_thresh)?),
            None => acc.exclude_frame(),
        }
    }
    Ok(acc.report(metrics, dece_cfg, sky_only))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// 10x10 map: rows 0..4 sky, 4..7 tree, 7..10 ground.
    fn banded() -> SegMapImage {
        let labels = (0..100)
            .map(|i| match i / 10 {
                0..=3 => BgLabel::Sky,
                4..=6 => BgLabel::Tree,
                _ => BgLabel::Ground,
            })
            .collect();
        SegMapImage::new(10, 10, labels).unwrap()
    }

    #[test]
    fn majority_labels() {
        let seg = banded();
        assert_eq!(bg_of_box(&bx(0., 0., 3., 3.), &seg).unwrap(), BgLabel::Sky);
        // rows 4..7 (6 tree pixels) and 7..9 (4 ground pixels), 2 columns wide
        assert_eq!(bg_of_box(&bx(0., 4., 2., 9.), &seg).unwrap(), BgLabel::Tree);
        assert!(matches!(
            bg_of_box(&bx(0.2, 0.2, 0.4, 0.4), &seg),
            Err(Error::EmptyRasterization)
        ));
    }

    #[test]
    fn tie_priority() {
        // 2 sky + 2 ground
        let labels = vec![BgLabel::Sky, BgLabel::Sky, BgLabel::Ground, BgLabel::Ground];
        let seg = SegMapImage::new(2, 2, labels).unwrap();
        assert_eq!(bg_of_box(&bx(0., 0., 2., 2.), &seg).unwrap(), BgLabel::Ground);
        let labels = vec![BgLabel::Tree, BgLabel::Sky, BgLabel::Ground, BgLabel::Tree];
        let seg = SegMapImage::new(2, 2, labels).unwrap();
        assert_eq!(bg_of_box(&bx(0., 0., 2., 2.), &seg).unwrap(), BgLabel::Tree);
        let labels = vec![BgLabel::Tree, BgLabel::Ground, BgLabel::Ground, BgLabel::Tree];
        let seg = SegMapImage::new(2, 2, labels).unwrap();
        assert_eq!(bg_of_box(&bx(0., 0., 2., 2.), &seg).unwrap(), BgLabel::Tree);
    }

    #[test]
    fn split_mixed_fixture() {
        let seg = banded();
        let dets = [
            Detection::new(bx(0., 0., 2., 2.), 0, 0.9),
            Detection::new(bx(3., 4., 5., 6.), 0, 0.9),
            Detection::new(bx(3., 7., 5., 10.), 0, 0.9),
            Detection::new(bx(6., 2., 8., 6.), 0, 0.9), // 2 sky rows, 2 tree rows: tie -> tree
        ];
        let gts = [GtBox {
            bbox: bx(0., 0., 2., 2.),
            class_id: 0,
        }];
        let p = split_by_bg(&dets, &gts, &seg).unwrap();
        assert_eq!(p.dets, [vec![0], vec![1, 3], vec![2]]);
        assert_eq!(p.gts, [vec![0], vec![], vec![]]);
    }

    fn gt(b: BBox) -> GtBox {
        GtBox { bbox: b, class_id: 0 }
    }

    #[test]
    fn ap_examples() {
        let g = vec![gt(bx(0., 0., 10., 10.))];
        let one = vec![Detection::new(bx(0., 0., 10., 9.), 0, 0.8)];
        assert_eq!(average_precision(&[(one, g.clone())], 0.5), Some(1.0));

        let fp = vec![Detection::new(bx(50., 50., 60., 60.), 0, 0.8)];
        let zero = average_precision(&[(fp.clone(), g.clone())], 0.5).unwrap();
        assert_eq!(zero.to_bits(), 0.0f64.to_bits());
        assert_eq!(average_precision(&[(fp, Vec::<GtBox>::new())], 0.5), None);

        // .9 TP, .8 FP, .7 TP over 2 GT
        let g2 = vec![gt(bx(0., 0., 10., 10.)), gt(bx(20., 0., 30., 10.))];
        let d = vec![
            Detection::new(bx(0., 0., 10., 10.), 0, 0.9),
            Detection::new(bx(50., 50., 60., 60.), 0, 0.8),
            Detection::new(bx(20., 0., 30., 10.), 0, 0.7),
        ];
        let ap = average_precision(&[(d, g2)], 0.5).unwrap();
        assert!((ap - 5.0 / 6.0).abs() <= 1e-12);
    }

    #[test]
    fn ap_is_mean_over_classes_with_ground_truth() {
        let g = vec![
            gt(bx(0., 0., 10., 10.)),
            GtBox {
                bbox: bx(20., 0., 30., 10.),
                class_id: 1,
            },
        ];
        let d = vec![Detection::new(bx(0., 0., 10., 10.), 0, 0.9)];
        assert_eq!(average_precision(&[(d, g)], 0.5), Some(0.5));
    }

    #[test]
    fn report_only_sky() {
        let seg = banded();
        let dets = vec![Detection::new(bx(0., 0., 3., 3.), 0, 0.9)];
        let gts = vec![gt(bx(0., 0., 3., 3.))];
        let frames = [EvalFrame {
            dets: &dets,
            gts: &gts,
            seg: Some(&seg),
        }];
        let r = bg_report(&frames, 0.5, MetricSelection::default(), &DeceConfig::default(), false).unwrap();
        assert_eq!(r.ap.total, Some(1.0));
        assert_eq!(r.ap.sky, r.ap.total);
        assert_eq!((r.ap.tree, r.ap.ground), (None, None));
        assert_eq!((r.dece.tree, r.dece.ground), (None, None));
        assert!(r.dece.sky.is_some());

        let no_seg = [EvalFrame {
            dets: &dets,
            gts: &gts,
            seg: None,
        }];
        let r = bg_report(&no_seg, 0.5, MetricSelection::default(), &DeceConfig::default(), true).unwrap();
        assert_eq!(r.excluded_frames, 1);
        assert_eq!(r.ap.total, None);
    }

    fn arb_frame() -> impl Strategy<Value = (Vec<Detection>, Vec<GtBox>)> {
        let b = (0.0..9.0f64, 0.0..9.0f64, 1.0..4.0f64, 1.0..4.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, (x + w).min(10.0), (y + h).min(10.0)));
        (
            prop::collection::vec((b.clone(), 0.0..1.0f64), 0..8)
                .prop_map(|v| v.into_iter().map(|(b, s)| Detection::new(b, 0, s)).collect()),
            prop::collection::vec(b, 0..6).prop_map(|v| v.into_iter().map(gt).collect()),
        )
    }

    proptest! {
        #[test]
        fn partition_law(frame in arb_frame()) {
            let (d, g) = frame;
            let p = split_by_bg(&d, &g, &banded()).unwrap();
            prop_assert_eq!(p.dets.iter().map(Vec::len).sum::<usize>(), d.len());
            prop_assert_eq!(p.gts.iter().map(Vec::len).sum::<usize>(), g.len());
        }

        #[test]
        fn removing_one_background_leaves_others(frames in prop::collection::vec(arb_frame(), 1..4)) {
            let seg = banded();
            let run = |drop_tree: bool| {
                let owned: Vec<(Vec<Detection>, Vec<GtBox>)> = frames
                    .iter()
                    .map(|(d, g)| {
                        let d = d.iter().copied().filter(|x| !drop_tree || bg_of_box(&x.bbox, &seg).unwrap() != BgLabel::Tree).collect();
                        (d, g.clone())
                    })
                    .collect();
                let ef: Vec<EvalFrame> = owned.iter().map(|(d, g)| EvalFrame { dets: d, gts: g, seg: Some(&seg) }).collect();
                bg_report(&ef, 0.5, MetricSelection::default(), &DeceConfig::default(), false).unwrap()
            };
            let a = run(false);
            let b = run(true);
            prop_assert_eq!(a.ap.sky, b.ap.sky);
            prop_assert_eq!(a.ap.ground, b.ap.ground);
            prop_assert_eq!(a.dece.sky, b.dece.sky);
        }
    }
}
