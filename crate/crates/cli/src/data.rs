use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use driftbench::formats::{group_by_frame, read_detections, read_ground_truth, read_segmap, SegMapImage};
use driftbench::{Detection, GtBox};

/// Bad invocation rather than bad data; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn require<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| UsageError(format!("missing required option --{flag}")).into())
}

pub struct FrameData {
    pub id: String,
    /// `(pass_id, detections)` sorted by pass id; empty for GT-only frames.
    pub passes: Vec<(u32, Vec<Detection>)>,
    pub gts: Vec<GtBox>,
}

impl FrameData {
    pub fn pass(&self, pass: u32) -> Result<&[Detection]> {
        if self.passes.is_empty() {
            return Ok(&[]);
        }
        self.passes
            .iter()
            .find(|(p, _)| *p == pass)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| anyhow::anyhow!("frame {:?} has no pass {pass}", self.id))
    }

    /// The first `n` passes; all of them when `n` is `None`.
    pub fn first_passes(&self, n: Option<usize>) -> Result<Vec<&[Detection]>> {
        let n = n.unwrap_or(self.passes.len());
        if self.passes.len() < n {
            anyhow::bail!("frame {:?} has {} passes, expected {n}", self.id, self.passes.len());
        }
        Ok(self.passes[..n].iter().map(|(_, d)| d.as_slice()).collect())
    }
}

/// Frames from a detection file and an optional ground-truth file, sorted
/// by frame id. Frames present in only one file are kept.
pub fn load_frames(dets: &Path, gt: Option<&Path>) -> Result<Vec<FrameData>> {
    let records = read_detections(dets).with_context(|| format!("in {}", dets.display()))?;
    let mut frames: BTreeMap<String, FrameData> = group_by_frame(records)
        .into_iter()
        .map(|f| {
            (
                f.frame_id.clone(),
                FrameData {
                    id: f.frame_id,
                    passes: f.passes,
                    gts: Vec::new(),
                },
            )
        })
        .collect();
    if let Some(gt) = gt {
        for r in read_ground_truth(gt).with_context(|| format!("in {}", gt.display()))? {
            frames
                .entry(r.frame_id.clone())
                .or_insert_with(|| FrameData {
                    id: r.frame_id,
                    passes: Vec::new(),
                    gts: Vec::new(),
                })
                .gts = r.boxes;
        }
    }
    Ok(frames.into_values().collect())
}

pub fn segmap_path(dir: &Path, frame_id: &str) -> PathBuf {
    dir.join(format!("{frame_id}.pgm"))
}

/// `Ok(None)` when the frame has no segmentation map.
pub fn load_segmap(dir: &Path, frame_id: &str) -> Result<Option<SegMapImage>> {
    let path = segmap_path(dir, frame_id);
    if !path.exists() {
        return Ok(None);
    }
    read_segmap(&path)
        .map(Some)
        .with_context(|| format!("in {}", path.display()))
}
