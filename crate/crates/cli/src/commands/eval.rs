use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use driftbench::bgmetrics::{evaluate_frame, BgAccumulator, BgRow, MetricSelection};
use driftbench::calibration::DeceConfig;
use driftbench::formats::{csv_writer, format_cell};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{bins_array, check_iou, output};
use crate::config::resolve;
use crate::data::{load_frames, load_segmap, require, segmap_path};
use crate::manifest::{manifest_beside, Inputs, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ap,
    Dece,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    /// Detections JSONL
    #[arg(long)]
    dets: Option<PathBuf>,
    /// Ground-truth JSONL
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Directory holding one <frame_id>.pgm background map per frame
    #[arg(long)]
    seg: Option<PathBuf>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label for the domain column [default: detections file stem]
    #[arg(long)]
    domain: Option<String>,
    /// IoU threshold for a true positive [default: 0.5]
    #[arg(long)]
    iou: Option<f64>,
    /// MC-dropout pass to evaluate [default: 0]
    #[arg(long)]
    pass: Option<u32>,
    /// Metrics to report [default: ap,dece]
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    /// Leave the tree and ground columns empty
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    sky_only: bool,
    /// D-ECE bins for score,cx,cy,w,h [default: 10,5,5,5,5]
    #[arg(long, value_delimiter = ',')]
    dece_bins: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub dets: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub seg: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub domain: Option<String>,
    pub iou: f64,
    pub pass: u32,
    pub metrics: Vec<Metric>,
    pub sky_only: bool,
    pub dece_bins: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            dets: None,
            gt: None,
            seg: None,
            out: None,
            domain: None,
            iou: 0.5,
            pass: 0,
            metrics: vec![Metric::Ap, Metric::Dece],
            sky_only: false,
            dece_bins: DeceConfig::default().bins.to_vec(),
        }
    }
}

pub fn run(args: &EvalArgs, file: Option<&Value>) -> Result<RunRecord> {
    let r = resolve::<EvalSettings, _>("eval", file, args)?;
    let s = &r.value;
    let dets = require(s.dets.as_deref(), "dets")?;
    let gt = require(s.gt.as_deref(), "gt")?;
    let seg_dir = require(s.seg.as_deref(), "seg")?;
    check_iou("iou", s.iou)?;
    let dece_cfg = DeceConfig {
        bins: bins_array(&s.dece_bins)?,
        iou_thresh: s.iou,
    };

    let frames = load_frames(dets, Some(gt))?;
    let contributions = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let Some(seg) = load_segmap(seg_dir, &f.id)? else {
                return Ok(None);
            };
            Ok(Some(evaluate_frame(i, f.pass(s.pass)?, &f.gts, &seg, s.iou)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut inputs = Inputs::default();
    inputs.add(dets)?;
    inputs.add(gt)?;
    let mut acc = BgAccumulator::new();
    for (f, c) in frames.iter().zip(contributions) {
        match c {
            Some(c) => {
                acc.merge(c);
                inputs.add(&segmap_path(seg_dir, &f.id))?;
            }
            None => acc.exclude_frame(),
        }
    }
    let selection = MetricSelection {
        ap: s.metrics.contains(&Metric::Ap),
        dece: s.metrics.contains(&Metric::Dece),
    };
    let report = acc.report(selection, &dece_cfg, s.sky_only);
    if report.excluded_frames > 0 {
        eprintln!(
            "note: {} of {} frames have no background map and were excluded",
            report.excluded_frames,
            frames.len()
        );
    }

    let domain = s.domain.clone().unwrap_or_else(|| {
        dets.file_stem()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned())
    });
    let mut w = csv_writer(output(s.out.as_deref())?);
    w.write_record(["domain", "metric", "total", "sky", "tree", "ground"])?;
    let rows: [(Metric, &str, &BgRow); 2] = [(Metric::Ap, "ap", &report.ap), (Metric::Dece, "dece", &report.dece)];
    for (m, name, row) in rows {
        if s.metrics.contains(&m) {
            w.write_record([
                domain.clone(),
                name.to_string(),
                format_cell(row.total),
                format_cell(row.sky),
                format_cell(row.tree),
                format_cell(row.ground),
            ])?;
        }
    }
    w.flush()?;

    Ok(RunRecord {
        default_path: manifest_beside(s.out.as_deref(), false, "eval"),
        config: r.json,
        sources: r.sources,
        inputs,
        seed: None,
    })
}
