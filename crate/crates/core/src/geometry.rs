//! Box geometry, IoU, rasterization, NMS candidate sets, NMS and
//! detection-to-ground-truth matching.
//!
//! Boxes are corner-format `[x1, y1, x2, y2]` in absolute pixels. Every
//! ordering in this module that depends on scores uses the same
//! deterministic tie-break: descending score, then lower `x1`, then lower
//! `y1`, then input order (see [`score_order`]).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x2 <= x1 || y2 <= y1 {
            return Err(Error::DegenerateBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }

    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }

    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// One predicted box from one inference pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: u32, score: f64) -> Self {
        Self {
            bbox,
            class_id,
            score,
        }
    }
}

/// One ground-truth annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub bbox: BBox,
    pub class_id: u32,
}

/// Intersection over union. Boxes sharing only an edge have IoU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Thresholds of the NMS candidate set: IoU `iou_eps` and score `score_delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub iou_eps: f64,
    pub score_delta: f64,
}

impl NmsConfig {
    pub const DEFAULT_IOU_EPS: f64 = 0.5;
    pub const DEFAULT_SCORE_DELTA: f64 = 0.05;

    pub fn new(iou_eps: f64, score_delta: f64) -> Result<Self> {
        if !(iou_eps > 0.0 && iou_eps <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "iou_eps must lie in (0, 1], got {iou_eps}"
            )));
        }
        if !(0.0..1.0).contains(&score_delta) {
            return Err(Error::InvalidArgument(format!(
                "score_delta must lie in [0, 1), got {score_delta}"
            )));
        }
        Ok(Self {
            iou_eps,
            score_delta,
        })
    }
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_eps: Self::DEFAULT_IOU_EPS,
            score_delta: Self::DEFAULT_SCORE_DELTA,
        }
    }
}

fn score_cmp(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
}

/// Indices of `dets` in processing order: descending score, then lower x1,
/// then lower y1, then input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable sort keeps input order as the final tie-break
    order.sort_by(|&i, &j| score_cmp(&dets[i], &dets[j]));
    order
}

/// Candidate set of detection `j`: every other detection of the same class
/// with IoU at least `iou_eps` and score at least `score_delta`.
pub fn candidate_set(dets: &[Detection], j: usize, cfg: &NmsConfig) -> Result<Vec<usize>> {
    let query = dets.get(j).ok_or_else(|| {
        Error::InvalidArgument(format!("index {j} out of range for {} detections", dets.len()))
    })?;
    Ok(dets
        .iter()
        .enumerate()
        .filter(|&(k, d)| {
            k != j
                && d.class_id == query.class_id
                && d.score >= cfg.score_delta
                && iou(&d.bbox, &query.bbox) >= cfg.iou_eps
        })
        .map(|(k, _)| k)
        .collect())
}

/// Greedy per-class NMS. Output is in descending score order.
pub fn nms(dets: &[Detection], cfg: &NmsConfig) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in score_order(dets) {
        let d = dets[i];
        if d.score < cfg.score_delta {
            // everything after this point scores lower
            break;
        }
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) >= cfg.iou_eps);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Outcome of matching one frame's detections against its ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    /// For each detection (input order): the matched GT index, or `None` for a false positive.
    pub det_match: Vec<Option<usize>>,
    /// For each GT: whether some detection claimed it.
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn is_tp(&self, det: usize) -> bool {
        self.det_match[det].is_some()
    }

    pub fn tp_count(&self) -> usize {
        self.det_match.iter().filter(|m| m.is_some()).count()
    }

    pub fn missed_count(&self) -> usize {
        self.gt_matched.iter().filter(|&&m| !m).count()
    }
}

/// Greedy one-to-one matching: detections are visited in [`score_order`]
/// and each claims the still-unmatched same-class GT with the highest IoU
/// at or above `iou_thresh` (lowest GT index on IoU ties).
pub fn match_to_gt(dets: &[Detection], gts: &[GtBox], iou_thresh: f64) -> MatchResult {
    let mut det_match = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    if gts.is_empty() {
        return MatchResult {
            det_match,
            gt_matched,
        };
    }
    for i in score_order(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] || gt.class_id != d.class_id {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v >= iou_thresh && best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_matched[g] = true;
            det_match[i] = Some(g);
        }
    }
    MatchResult {
        det_match,
        gt_matched,
    }
}

/// Half-open integer pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }

    /// Covered pixels as `(x, y)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (x0, x1) = (self.x0, self.x1.max(self.x0));
        (self.y0..self.y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

fn cover(lo: f64, hi: f64, limit: usize) -> (usize, usize) {
    let limit_f = limit as f64;
    let start = lo.ceil().clamp(0.0, limit_f) as usize;
    let end = hi.ceil().clamp(0.0, limit_f) as usize;
    (start, end.max(start))
}

/// Pixels `(x, y)` with `x1 <= x < x2` and `y1 <= y < y2`, clamped to a
/// `width × height` image. Pixel centers sit on integer coordinates.
pub fn rasterize(b: &BBox, height: usize, width: usize) -> PixelRect {
    let (x0, x1) = cover(b.x1, b.x2, width);
    let (y0, y1) = cover(b.y1, b.y2, height);
    PixelRect { x0, y0, x1, y1 }
}

/// True when the box overlaps the image plane `[0, width) × [0, height)`.
pub fn intersects_image(b: &BBox, height: usize, width: usize) -> bool {
    b.x2 > 0.0 && b.y2 > 0.0 && b.x1 < width as f64 && b.y1 < height as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(b: BBox, c: u32, s: f64) -> Detection {
        Detection::new(b, c, s)
    }

    fn fixture() -> Vec<Detection> {
        vec![
            det(bx(0.0, 0.0, 2.0, 2.0), 0, 0.9),
            det(bx(0.1, 0.0, 2.0, 2.0), 0, 0.8),
            det(bx(0.0, 0.0, 2.0, 2.0), 1, 0.9),
        ]
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bx(0., 0., 2., 2.), &bx(0., 0., 2., 2.)), 1.0);
        assert_eq!(iou(&bx(0., 0., 1., 1.), &bx(2., 2., 3., 3.)), 0.0);
        let v = iou(&bx(0., 0., 2., 2.), &bx(1., 1., 3., 3.));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
        // shared edge only
        assert_eq!(iou(&bx(0., 0., 1., 1.), &bx(1., 0., 2., 1.)), 0.0);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(matches!(
            BBox::new(2., 2., 1., 3.),
            Err(Error::DegenerateBox { .. })
        ));
        assert!(BBox::new(0., 0., f64::NAN, 1.).is_err());
    }

    #[test]
    fn candidate_set_examples() {
        let dets = fixture();
        let cfg = NmsConfig::new(0.5, 0.05).unwrap();
        assert_eq!(candidate_set(&dets, 0, &cfg).unwrap(), vec![1]);
        assert!(candidate_set(&dets[..1], 0, &cfg).unwrap().is_empty());
        let strict = NmsConfig::new(0.5, 0.85).unwrap();
        assert!(candidate_set(&dets, 0, &strict).unwrap().is_empty());
        assert!(candidate_set(&dets, 3, &cfg).is_err());
    }

    #[test]
    fn nms_examples() {
        let dets = fixture();
        let out = nms(&dets, &NmsConfig::default());
        assert_eq!(out, vec![dets[0], dets[2]]);

        let low: Vec<_> = dets.iter().map(|d| det(d.bbox, d.class_id, 0.01)).collect();
        assert!(nms(&low, &NmsConfig::default()).is_empty());

        let apart = vec![
            det(bx(0., 0., 1., 1.), 0, 0.5),
            det(bx(5., 5., 6., 6.), 0, 0.6),
        ];
        assert_eq!(nms(&apart, &NmsConfig::default()).len(), 2);
    }

    #[test]
    fn score_ties_break_on_x1_then_y1() {
        let dets = vec![
            det(bx(3., 0., 4., 1.), 0, 0.5),
            det(bx(1., 2., 2., 3.), 0, 0.5),
            det(bx(1., 1., 2., 2.), 0, 0.5),
        ];
        assert_eq!(score_order(&dets), vec![2, 1, 0]);
    }

    #[test]
    fn match_examples() {
        let gt = [GtBox {
            bbox: bx(0., 0., 10., 10.),
            class_id: 0,
        }];
        // IoU 0.6
        let d = [det(bx(0., 0., 6., 10.), 0, 0.9)];
        let m = match_to_gt(&d, &gt, 0.5);
        assert!(m.is_tp(0));
        // IoU 0.4
        let d = [det(bx(0., 0., 4., 10.), 0, 0.9)];
        let m = match_to_gt(&d, &gt, 0.5);
        assert!(!m.is_tp(0));
        assert_eq!(m.missed_count(), 1);
        // greedy order: the higher score wins even with the lower IoU
        let d = [
            det(bx(0., 0., 5.5, 10.), 0, 0.9),
            det(bx(0., 0., 9.5, 10.), 0, 0.8),
        ];
        let m = match_to_gt(&d, &gt, 0.5);
        assert_eq!(m.det_match, vec![Some(0), None]);
    }

    #[test]
    fn rasterize_examples() {
        let r = rasterize(&bx(0., 0., 2., 2.), 4, 4);
        let px: Vec<_> = r.pixels().collect();
        assert_eq!(px, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        let r = rasterize(&bx(-5., -5., 1., 1.), 4, 4);
        assert_eq!(r.pixels().collect::<Vec<_>>(), vec![(0, 0)]);
        let r = rasterize(&bx(0.4, 0.4, 0.6, 0.6), 4, 4);
        assert!(r.is_empty());
        assert_eq!(r.pixels().count(), 0);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..50.0f64, 0.0..50.0f64, 0.1..30.0f64, 0.1..30.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec((arb_box(), 0u32..2, 0.0..1.0f64), 0..25)
            .prop_map(|v| v.into_iter().map(|(b, c, s)| det(b, c, s)).collect())
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn nms_output_is_consistent(dets in arb_dets()) {
            let cfg = NmsConfig::default();
            let out = nms(&dets, &cfg);
            for w in out.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            for (i, a) in out.iter().enumerate() {
                prop_assert!(a.score >= cfg.score_delta);
                for b in &out[i + 1..] {
                    prop_assert!(a.class_id != b.class_id || iou(&a.bbox, &b.bbox) < cfg.iou_eps);
                }
            }
            // every dropped detection is covered by a kept one with at least its score
            for d in dets.iter().filter(|d| d.score >= cfg.score_delta) {
                prop_assert!(out.iter().any(|k| k.class_id == d.class_id
                    && iou(&k.bbox, &d.bbox) >= cfg.iou_eps
                    && k.score >= d.score));
            }
        }

        #[test]
        fn nms_permutation_invariant(dets in arb_dets(), seed in any::<u64>()) {
            let mut shuffled = dets.clone();
            // deterministic Fisher-Yates from the seed
            let mut s = seed | 1;
            for i in (1..shuffled.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                shuffled.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let cfg = NmsConfig::default();
            prop_assert_eq!(nms(&dets, &cfg), nms(&shuffled, &cfg));
        }

        #[test]
        fn matching_never_double_assigns(dets in arb_dets(), gts in prop::collection::vec((arb_box(), 0u32..2), 0..15)) {
            let gts: Vec<GtBox> = gts.into_iter().map(|(bbox, class_id)| GtBox { bbox, class_id }).collect();
            let m = match_to_gt(&dets, &gts, 0.5);
            let mut seen = vec![0usize; gts.len()];
            for g in m.det_match.iter().flatten() {
                seen[*g] += 1;
            }
            prop_assert!(seen.iter().all(|&c| c <= 1));
            prop_assert!(m.tp_count() <= dets.len().min(gts.len()));
            prop_assert_eq!(m.tp_count(), m.gt_matched.iter().filter(|&&b| b).count());
        }
    }
}
