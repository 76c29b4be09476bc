//! Detection-level MC-dropout uncertainty (MCDO-NMS).
//!
//! Detections from repeated stochastic passes over one frame are associated
//! into lists: pass 0 seeds one list per detection, and each later pass
//! greedily hands its detections to the same-class list whose representative
//! (the running mean box of its members) overlaps most, subject to an IoU
//! floor. A list accepts at most one detection per pass; leftovers seed new
//! lists. Each list then yields a localization spread and the entropy of its
//! mean class-probability vector, and lists are pooled by a
//! cardinality-weighted average, optionally split by TP/FP.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{iou, match_to_gt, BBox, Detection, GtBox};

pub const DEFAULT_IOU_ASSOC: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListMember {
    pub pass: usize,
    pub index: usize,
    pub detection: Detection,
}

/// Detections of one object across passes.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationList {
    pub class_id: u32,
    pub members: Vec<ListMember>,
    representative: BBox,
}

impl AssociationList {
    fn seed(m: ListMember) -> Self {
        Self {
            class_id: m.detection.class_id,
            representative: m.detection.bbox,
            members: vec![m],
        }
    }

    /// Number of members, `c_q`.
    pub fn cardinality(&self) -> usize {
        self.members.len()
    }

    /// Running mean box of the members.
    pub fn representative(&self) -> BBox {
        self.representative
    }

    pub fn mean_score(&self) -> f64 {
        self.members.iter().map(|m| m.detection.score).sum::<f64>() / self.members.len() as f64
    }

    fn refresh_representative(&mut self) {
        let mean = mean_box(self.members.iter().map(|m| m.detection.bbox.to_array()));
        // the mean of valid boxes is valid; keep the old one if rounding says otherwise
        if let Ok(b) = BBox::try_from(mean) {
            self.representative = b;
        }
    }
}

/// Mean of boxes, accumulated as offsets from the first one so identical
/// boxes reproduce it exactly.
fn mean_box(boxes: impl Iterator<Item = [f64; 4]> + Clone) -> [f64; 4] {
    let mut it = boxes.clone();
    let Some(base) = it.next() else {
        return [0.0; 4];
    };
    let mut n = 1usize;
    let mut shift = [0.0f64; 4];
    for b in it {
        n += 1;
        for k in 0..4 {
            shift[k] += b[k] - base[k];
        }
    }
    let mut out = base;
    for k in 0..4 {
        out[k] += shift[k] / n as f64;
    }
    out
}

/// Greedy max-IoU association of per-pass detections into lists.
pub fn associate_passes<P: AsRef<[Detection]>>(
    passes: &[P],
    iou_assoc: f64,
) -> Result<Vec<AssociationList>> {
    if passes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "association needs at least 2 passes, got {}",
            passes.len()
        )));
    }
    if !(iou_assoc > 0.0 && iou_assoc <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "iou_assoc must lie in (0, 1], got {iou_assoc}"
        )));
    }
    let mut lists: Vec<AssociationList> = passes[0]
        .as_ref()
        .iter()
        .enumerate()
        .map(|(index, &detection)| {
            AssociationList::seed(ListMember {
                pass: 0,
                index,
                detection,
            })
        })
        .collect();

    for (pass, dets) in passes.iter().enumerate().skip(1) {
        let dets = dets.as_ref();
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (q, list) in lists.iter().enumerate() {
            for (j, d) in dets.iter().enumerate() {
                if d.class_id != list.class_id {
                    continue;
                }
                let v = iou(&list.representative, &d.bbox);
                if v >= iou_assoc {
                    pairs.push((q, j, v));
                }
            }
        }
        pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

        let mut list_taken = vec![false; lists.len()];
        let mut det_taken = vec![false; dets.len()];
        for (q, j, _) in pairs {
            if list_taken[q] || det_taken[j] {
                continue;
            }
            list_taken[q] = true;
            det_taken[j] = true;
            lists[q].members.push(ListMember {
                pass,
                index: j,
                detection: dets[j],
            });
        }
        for (q, grew) in list_taken.iter().enumerate() {
            if *grew {
                lists[q].refresh_representative();
            }
        }
        for (j, d) in dets.iter().enumerate() {
            if !det_taken[j] {
                lists.push(AssociationList::seed(ListMember {
                    pass,
                    index: j,
                    detection: *d,
                }));
            }
        }
    }
    Ok(lists)
}

/// Per-list spread `σ_b` and classification entropy `H_cls`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ListUncertainty {
    pub cardinality: usize,
    pub sigma_b: f64,
    pub h_cls: f64,
}

/// `σ_b` is the root of the mean (over members) summed squared residual of
/// the four box coordinates. `H_cls` is the entropy of the mean of the
/// members' two-point probability vectors (score on the predicted class,
/// the remainder on background).
pub fn list_uncertainty(list: &AssociationList) -> ListUncertainty {
    let c = list.members.len();
    let boxes = list.members.iter().map(|m| m.detection.bbox.to_array());
    let mean = mean_box(boxes.clone());
    let ss: f64 = boxes
        .map(|b| (0..4).map(|k| (b[k] - mean[k]).powi(2)).sum::<f64>())
        .sum();
    let sigma_b = (ss / c as f64).sqrt();

    let p_cls = list.members.iter().map(|m| m.detection.score).sum::<f64>() / c as f64;
    let p_bg = list.members.iter().map(|m| 1.0 - m.detection.score).sum::<f64>() / c as f64;
    let h_cls = [p_cls, p_bg]
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0);
    ListUncertainty {
        cardinality: c,
        sigma_b,
        h_cls,
    }
}

/// TP/FP label per list, from greedy matching of the list representatives
/// (mean box, list class, mean score) against the frame's ground truth.
pub fn label_lists(lists: &[AssociationList], gts: &[GtBox], iou_thresh: f64) -> Vec<bool> {
    let reps: Vec<Detection> = lists
        .iter()
        .map(|l| Detection::new(l.representative, l.class_id, l.mean_score()))
        .collect();
    let m = match_to_gt(&reps, gts, iou_thresh);
    (0..lists.len()).map(|i| m.is_tp(i)).collect()
}

/// Aggregate over all lists and over the TP and FP subsets. Subsets with no
/// lists are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsetAggregate {
    pub total: Option<f64>,
    pub tp: Option<f64>,
    pub fp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McdoNmsResult {
    pub localization: SubsetAggregate,
    pub classification: SubsetAggregate,
    pub lists: usize,
    pub tp_lists: usize,
    pub fp_lists: usize,
}

fn weighted<'a>(items: impl Iterator<Item = &'a (ListUncertainty, bool)>) -> (Option<f64>, Option<f64>) {
    let (mut weight, mut loc, mut cls) = (0.0, 0.0, 0.0);
    for (u, _) in items {
        let c = u.cardinality as f64;
        weight += c;
        loc += c * u.sigma_b * u.sigma_b;
        cls += c * u.h_cls;
    }
    if weight == 0.0 {
        return (None, None);
    }
    (Some((loc / weight).sqrt()), Some(cls / weight))
}

/// Pools per-list values with cardinality weights:
/// classification = Σ c·H / Σ c, localization = sqrt(Σ c·σ² / Σ c).
pub fn aggregate(per_list: &[(ListUncertainty, bool)]) -> McdoNmsResult {
    let (loc_total, cls_total) = weighted(per_list.iter());
    let (loc_tp, cls_tp) = weighted(per_list.iter().filter(|(_, tp)| *tp));
    let (loc_fp, cls_fp) = weighted(per_list.iter().filter(|(_, tp)| !*tp));
    let tp_lists = per_list.iter().filter(|(_, tp)| *tp).count();
    McdoNmsResult {
        localization: SubsetAggregate {
            total: loc_total,
            tp: loc_tp,
            fp: loc_fp,
        },
        classification: SubsetAggregate {
            total: cls_total,
            tp: cls_tp,
            fp: cls_fp,
        },
        lists: per_list.len(),
        tp_lists,
        fp_lists: per_list.len() - tp_lists,
    }
}

/// Associates, scores and labels one frame's lists.
pub fn frame_lists<P: AsRef<[Detection]>>(
    passes: &[P],
    gts: &[GtBox],
    iou_assoc: f64,
    iou_thresh: f64,
) -> Result<Vec<(ListUncertainty, bool)>> {
    let lists = associate_passes(passes, iou_assoc)?;
    let labels = label_lists(&lists, gts, iou_thresh);
    Ok(lists.iter().map(list_uncertainty).zip(labels).collect())
}
