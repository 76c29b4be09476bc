use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use driftbench::formats::{csv_writer, format_cell, write_json_pretty};
use driftbench::mcdo_nms::{aggregate, frame_lists, DEFAULT_IOU_ASSOC};
use driftbench::scoremap::{dataset_scalar, dump_uncertainty_map, frame_mcdo_map, mcdo_map_scalar, DEFAULT_DUMP_SCALE};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_iou, output};
use crate::config::resolve;
use crate::data::{load_frames, require};
use crate::manifest::{manifest_beside, Inputs, RunRecord};

#[derive(Args, Serialize)]
pub struct MapArgs {
    /// Detections JSONL with one line per (frame, pass)
    #[arg(long)]
    dets: Option<PathBuf>,
    /// Passes per frame; frames with fewer are an error [default: all present]
    #[arg(long)]
    passes: Option<usize>,
    /// Image width in pixels
    #[arg(long)]
    width: Option<usize>,
    /// Image height in pixels
    #[arg(long)]
    height: Option<usize>,
    /// Number of object classes [default: 1]
    #[arg(long)]
    classes: Option<usize>,
    /// Output directory for scalars.csv and summary.json [default: stdout only]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write 16-bit PGM dumps of both channels per frame
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    dump_maps: bool,
    /// Fixed-point scale of map dumps [default: 10000]
    #[arg(long)]
    dump_scale: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSettings {
    pub dets: Option<PathBuf>,
    pub passes: Option<usize>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub classes: usize,
    pub out: Option<PathBuf>,
    pub dump_maps: bool,
    pub dump_scale: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        Self {
            dets: None,
            passes: None,
            width: None,
            height: None,
            classes: 1,
            out: None,
            dump_maps: false,
            dump_scale: DEFAULT_DUMP_SCALE,
        }
    }
}

pub fn run_map(args: &MapArgs, file: Option<&Value>) -> Result<RunRecord> {
    let r = resolve::<MapSettings, _>("mcdo-map", file, args)?;
    let s = &r.value;
    let dets = require(s.dets.as_deref(), "dets")?;
    let width = require(s.width, "width")?;
    let height = require(s.height, "height")?;
    if s.dump_maps && s.out.is_none() {
        return Err(crate::data::UsageError("--dump-maps needs --out".into()).into());
    }
    let frames = load_frames(dets, None)?;
    if let Some(out) = &s.out {
        fs::create_dir_all(out)?;
    }
    let scalars = frames
        .par_iter()
        .map(|f| {
            let passes = f.first_passes(s.passes)?;
            let map = frame_mcdo_map(passes, height, width, s.classes)
                .with_context(|| format!("frame {:?}", f.id))?;
            if let (true, Some(out)) = (s.dump_maps, &s.out) {
                dump_uncertainty_map(&map, out, &f.id, s.dump_scale)?;
            }
            Ok(mcdo_map_scalar(&map)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let total = dataset_scalar(&scalars)?;
    println!("{total}");

    if let Some(out) = &s.out {
        let mut w = csv_writer(output(Some(&out.join("scalars.csv")))?);
        w.write_record(["frame_id", "mcdo_map"])?;
        for (f, v) in frames.iter().zip(&scalars) {
            w.write_record([f.id.clone(), v.to_string()])?;
        }
        w.flush()?;
        let summary = json!({
            "frames": frames.len(),
            "mcdo_map": total,
        });
        write_json_pretty(&summary, fs::File::create(out.join("summary.json"))?)?;
    }

    let mut inputs = Inputs::default();
    inputs.add(dets)?;
    Ok(RunRecord {
        default_path: manifest_beside(s.out.as_deref(), true, "mcdo-map"),
        config: r.json,
        sources: r.sources,
        inputs,
        seed: None,
    })
}

#[derive(Args, Serialize)]
pub struct NmsArgs {
    /// Detections JSONL with one line per (frame, pass)
    #[arg(long)]
    dets: Option<PathBuf>,
    /// Ground-truth JSONL used to split lists into TP and FP
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Passes per frame; frames with fewer are an error [default: all present]
    #[arg(long)]
    passes: Option<usize>,
    /// IoU needed to join a detection to a list [default: 0.5]
    #[arg(long)]
    iou_assoc: Option<f64>,
    /// IoU threshold for a true positive [default: 0.5]
    #[arg(long)]
    iou: Option<f64>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsSettings {
    pub dets: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub passes: Option<usize>,
    pub iou_assoc: f64,
    pub iou: f64,
    pub out: Option<PathBuf>,
}

impl Default for NmsSettings {
    fn default() -> Self {
        Self {
            dets: None,
            gt: None,
            passes: None,
            iou_assoc: DEFAULT_IOU_ASSOC,
            iou: 0.5,
            out: None,
        }
    }
}

pub fn run_nms(args: &NmsArgs, file: Option<&Value>) -> Result<RunRecord> {
    let r = resolve::<NmsSettings, _>("mcdo-nms", file, args)?;
    let s = &r.value;
    let dets = require(s.dets.as_deref(), "dets")?;
    let gt = require(s.gt.as_deref(), "gt")?;
    check_iou("iou", s.iou)?;
    let frames = load_frames(dets, Some(gt))?;
    let per_frame = frames
        .par_iter()
        .filter(|f| !f.passes.is_empty())
        .map(|f| {
            let passes = f.first_passes(s.passes)?;
            frame_lists(&passes, &f.gts, s.iou_assoc, s.iou).with_context(|| format!("frame {:?}", f.id))
        })
        .collect::<Result<Vec<_>>>()?;
    let lists: Vec<_> = per_frame.into_iter().flatten().collect();
    let res = aggregate(&lists);

    let mut w = csv_writer(output(s.out.as_deref())?);
    w.write_record(["measure", "total", "tp", "fp"])?;
    for (name, a) in [("localization", res.localization), ("classification", res.classification)] {
        w.write_record([name.to_string(), format_cell(a.total), format_cell(a.tp), format_cell(a.fp)])?;
    }
    w.write_record([
        "lists".to_string(),
        res.lists.to_string(),
        res.tp_lists.to_string(),
        res.fp_lists.to_string(),
    ])?;
    w.flush()?;

    let mut inputs = Inputs::default();
    inputs.add(dets)?;
    inputs.add(gt)?;
    Ok(RunRecord {
        default_path: manifest_beside(s.out.as_deref(), false, "mcdo-nms"),
        config: r.json,
        sources: r.sources,
        inputs,
        seed: None,
    })
}
