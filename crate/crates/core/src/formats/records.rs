//! JSON-Lines records: detections, ground truth and grad-loss scalars.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, GtBox};

/// Detections of one frame from one inference pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub frame_id: String,
    pub pass_id: u32,
    pub detections: Vec<Detection>,
}

/// Ground-truth boxes of one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthRecord {
    pub frame_id: String,
    pub boxes: Vec<GtBox>,
}

/// Localization and classification terms of one detection's grad-loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradLoss {
    pub loc: f64,
    pub cls: f64,
}

/// Precomputed grad-loss scalars for the detections of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradLossRecord {
    pub frame_id: String,
    pub detections: Vec<GradLoss>,
}

#[derive(Deserialize)]
struct RawDetection {
    bbox: [f64; 4],
    class_id: u32,
    score: f64,
}

#[derive(Deserialize)]
struct RawDetectionRecord {
    frame_id: String,
    pass_id: u32,
    detections: Vec<RawDetection>,
}

#[derive(Deserialize)]
struct RawGtBox {
    bbox: [f64; 4],
    class_id: u32,
}

#[derive(Deserialize)]
struct RawGroundTruthRecord {
    frame_id: String,
    boxes: Vec<RawGtBox>,
}

/// Yields `(1-based line number, parsed value)` for every non-blank line.
fn json_lines<T: DeserializeOwned>(reader: impl BufRead) -> impl Iterator<Item = Result<(usize, T)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line_no = i + 1;
            match line {
                Err(e) => Some(Err(Error::Io(e))),
                Ok(l) if l.trim().is_empty() => None,
                Ok(l) => Some(serde_json::from_str::<T>(&l).map(|v| (line_no, v)).map_err(|e| {
                    Error::Json {
                        line: line_no,
                        message: e.to_string(),
                    }
                })),
            }
        })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn to_box(raw: [f64; 4]) -> std::result::Result<BBox, String> {
    BBox::try_from(raw).map_err(|_| {
        format!(
            "degenerate box [{}, {}, {}, {}]",
            raw[0], raw[1], raw[2], raw[3]
        )
    })
}

pub fn parse_detections(reader: impl BufRead) -> Result<Vec<DetectionRecord>> {
    let mut seen: HashSet<(String, u32)> = HashSet::new();
    let mut out = Vec::new();
    for item in json_lines::<RawDetectionRecord>(reader) {
        let (line, raw) = item?;
        let invalid = |message: String| Error::InvalidDetection {
            line,
            frame_id: raw.frame_id.clone(),
            pass_id: raw.pass_id,
            message,
        };
        let mut detections = Vec::with_capacity(raw.detections.len());
        for (k, d) in raw.detections.iter().enumerate() {
            let bbox = to_box(d.bbox).map_err(|m| invalid(format!("detection {k}: {m}")))?;
            if !(0.0..=1.0).contains(&d.score) {
                return Err(invalid(format!(
                    "detection {k}: score {} outside [0, 1]",
                    d.score
                )));
            }
            detections.push(Detection::new(bbox, d.class_id, d.score));
        }
        if !seen.insert((raw.frame_id.clone(), raw.pass_id)) {
            return Err(Error::DuplicatePass {
                line,
                frame_id: raw.frame_id,
                pass_id: raw.pass_id,
            });
        }
        out.push(DetectionRecord {
            frame_id: raw.frame_id,
            pass_id: raw.pass_id,
            detections,
        });
    }
    Ok(out)
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    parse_detections(open(path.as_ref())?)
}

pub fn parse_ground_truth(reader: impl BufRead) -> Result<Vec<GroundTruthRecord>> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for item in json_lines::<RawGroundTruthRecord>(reader) {
        let (line, raw) = item?;
        let mut boxes = Vec::with_capacity(raw.boxes.len());
        for (k, g) in raw.boxes.iter().enumerate() {
            let bbox = to_box(g.bbox).map_err(|m| Error::InvalidRecord {
                line,
                frame_id: raw.frame_id.clone(),
                message: format!("box {k}: {m}"),
            })?;
            boxes.push(GtBox {
                bbox,
                class_id: g.class_id,
            });
        }
        if !seen.insert(raw.frame_id.clone()) {
            return Err(Error::DuplicateFrame {
                line,
                frame_id: raw.frame_id,
            });
        }
        out.push(GroundTruthRecord {
            frame_id: raw.frame_id,
            boxes,
        });
    }
    Ok(out)
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRecord>> {
    parse_ground_truth(open(path.as_ref())?)
}

pub fn parse_grad_loss(reader: impl BufRead) -> Result<Vec<GradLossRecord>> {
    let mut out = Vec::new();
    for item in json_lines::<GradLossRecord>(reader) {
        let (line, rec) = item?;
        for (k, g) in rec.detections.iter().enumerate() {
            let ok = |v: f64| v.is_finite() && v >= 0.0;
            if !ok(g.loc) || !ok(g.cls) {
                return Err(Error::InvalidRecord {
                    line,
                    frame_id: rec.frame_id.clone(),
                    message: format!(
                        "detection {k}: grad-loss terms must be finite and non-negative (loc {}, cls {})",
                        g.loc, g.cls
                    ),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_grad_loss(path: impl AsRef<Path>) -> Result<Vec<GradLossRecord>> {
    parse_grad_loss(open(path.as_ref())?)
}

/// Writes one compact JSON object per line, LF-terminated.
pub fn write_json_lines<T: Serialize>(records: &[T], mut w: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_detections(records: &[DetectionRecord], path: impl AsRef<Path>) -> Result<()> {
    write_json_lines(records, std::io::BufWriter::new(File::create(path)?))
}

pub fn write_ground_truth(records: &[GroundTruthRecord], path: impl AsRef<Path>) -> Result<()> {
    write_json_lines(records, std::io::BufWriter::new(File::create(path)?))
}

pub fn write_grad_loss(records: &[GradLossRecord], path: impl AsRef<Path>) -> Result<()> {
    write_json_lines(records, std::io::BufWriter::new(File::create(path)?))
}

/// All passes recorded for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePasses {
    pub frame_id: String,
    /// `(pass_id, detections)` sorted by pass id.
    pub passes: Vec<(u32, Vec<Detection>)>,
}

impl FramePasses {
    pub fn pass(&self, pass_id: u32) -> Option<&[Detection]> {
        self.passes
            .iter()
            .find(|(p, _)| *p == pass_id)
            .map(|(_, d)| d.as_slice())
    }
}

/// Groups records by frame, in order of first appearance.
pub fn group_by_frame(records: Vec<DetectionRecord>) -> Vec<FramePasses> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut frames: Vec<FramePasses> = Vec::new();
    for r in records {
        let slot = *index.entry(r.frame_id.clone()).or_insert_with(|| {
            frames.push(FramePasses {
                frame_id: r.frame_id.clone(),
                passes: Vec::new(),
            });
            frames.len() - 1
        });
        frames[slot].passes.push((r.pass_id, r.detections));
    }
    for f in &mut frames {
        f.passes.sort_by_key(|(p, _)| *p);
    }
    frames
}
