use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use driftbench::calibration::{dece, frame_samples, DeceConfig, DIM_NAMES};
use driftbench::formats::csv_writer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{bins_array, check_iou, output};
use crate::config::resolve;
use crate::data::{load_frames, require};
use crate::manifest::{manifest_beside, Inputs, RunRecord};

#[derive(Args, Serialize)]
pub struct DeceArgs {
    /// Detections JSONL
    #[arg(long)]
    dets: Option<PathBuf>,
    /// Ground-truth JSONL
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Image width used to normalize box coordinates
    #[arg(long)]
    width: Option<usize>,
    /// Image height used to normalize box coordinates
    #[arg(long)]
    height: Option<usize>,
    /// Per-cell diagnostics CSV [default: none]
    #[arg(long)]
    out: Option<PathBuf>,
    /// IoU threshold for a true positive [default: 0.5]
    #[arg(long)]
    iou: Option<f64>,
    /// MC-dropout pass to evaluate [default: 0]
    #[arg(long)]
    pass: Option<u32>,
    /// Bins for score,cx,cy,w,h [default: 10,5,5,5,5]
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeceSettings {
    pub dets: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub out: Option<PathBuf>,
    pub iou: f64,
    pub pass: u32,
    pub bins: Vec<usize>,
}

impl Default for DeceSettings {
    fn default() -> Self {
        let d = DeceConfig::default();
        Self {
            dets: None,
            gt: None,
            width: None,
            height: None,
            out: None,
            iou: d.iou_thresh,
            pass: 0,
            bins: d.bins.to_vec(),
        }
    }
}

pub fn run(args: &DeceArgs, file: Option<&Value>) -> Result<RunRecord> {
    let r = resolve::<DeceSettings, _>("dece", file, args)?;
    let s = &r.value;
    let dets = require(s.dets.as_deref(), "dets")?;
    let gt = require(s.gt.as_deref(), "gt")?;
    let width = require(s.width, "width")?;
    let height = require(s.height, "height")?;
    if width == 0 || height == 0 {
        anyhow::bail!("image size must be positive");
    }
    check_iou("iou", s.iou)?;
    let cfg = DeceConfig {
        bins: bins_array(&s.bins)?,
        iou_thresh: s.iou,
    };

    let frames = load_frames(dets, Some(gt))?;
    let per_frame = frames
        .par_iter()
        .map(|f| Ok(frame_samples(f.pass(s.pass)?, &f.gts, width, height, s.iou)))
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<_> = per_frame.into_iter().flatten().collect();
    let res = dece(&samples, &cfg)?;

    if let Some(path) = s.out.as_deref() {
        let mut w = csv_writer(output(Some(path))?);
        let mut header: Vec<String> = DIM_NAMES.iter().map(|d| format!("{d}_bin")).collect();
        header.extend(["count", "confidence", "precision", "gap"].map(String::from));
        w.write_record(&header)?;
        for c in &res.cells {
            let mut rec: Vec<String> = c.cell.iter().map(usize::to_string).collect();
            rec.push(c.count.to_string());
            rec.push(c.conf.to_string());
            rec.push(c.prec.to_string());
            rec.push((c.prec - c.conf).abs().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    let marginal: serde_json::Map<String, Value> = DIM_NAMES
        .iter()
        .zip(res.marginal)
        .map(|(d, v)| (d.to_string(), json!(v)))
        .collect();
    let summary = json!({
        "dece": res.joint,
        "marginal": marginal,
        "detections": res.detections,
        "occupied_cells": res.cells.len(),
        "clamped": res.clamped,
    });
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &summary)?;
    writeln!(out)?;

    let mut inputs = Inputs::default();
    inputs.add(dets)?;
    inputs.add(gt)?;
    Ok(RunRecord {
        default_path: manifest_beside(s.out.as_deref(), false, "dece"),
        config: r.json,
        sources: r.sources,
        inputs,
        seed: None,
    })
}
