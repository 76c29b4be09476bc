use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use driftbench::formats::csv_writer;
use driftbench::scoremap::{frame_mcdo_map, UncertaintyMap};
use driftbench::uda::{
    adv_loss, disc_forward, fixture_maps, interpolate_maps, pool_all, total_loss, train_on_features, TrainConfig,
    DEFAULT_GRID, DEFAULT_LAMBDA,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::output;
use crate::config::resolve;
use crate::data::{load_frames, UsageError};
use crate::manifest::{manifest_beside, Inputs, RunRecord};

#[derive(Args, Serialize)]
pub struct UdaArgs {
    /// Seed for fixture maps and discriminator initialization [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Gradient-descent steps [default: 500]
    #[arg(long)]
    steps: Option<usize>,
    /// Learning rate [default: 0.1]
    #[arg(long)]
    lr: Option<f64>,
    /// Pooling grid size G [default: 4]
    #[arg(long)]
    grid: Option<usize>,
    /// Weight of the adversarial term in the total loss [default: 0.1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Detection loss reported in the breakdown [default: 1.0]
    #[arg(long)]
    l_det: Option<f64>,
    /// Fixture maps per domain [default: 10]
    #[arg(long)]
    maps: Option<usize>,
    /// Map width [default: 32]
    #[arg(long)]
    width: Option<usize>,
    /// Map height [default: 32]
    #[arg(long)]
    height: Option<usize>,
    /// Classes when building maps from detections [default: 1]
    #[arg(long)]
    classes: Option<usize>,
    /// Offset added to the source summed-std channel of fixture maps [default: 1.0]
    #[arg(long)]
    offset: Option<f64>,
    /// Interpolation weights of target maps toward source [default: 0,0.25,0.5,0.75,1]
    #[arg(long, value_delimiter = ',')]
    interp: Option<Vec<f64>>,
    /// Source detections JSONL; maps come from its passes instead of fixtures
    #[arg(long, requires = "tgt_dets")]
    src_dets: Option<PathBuf>,
    /// Target detections JSONL
    #[arg(long, requires = "src_dets")]
    tgt_dets: Option<PathBuf>,
    /// Output directory for trace.csv and losses.csv [default: losses to stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UdaSettings {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub grid: usize,
    pub lambda: f64,
    pub l_det: f64,
    pub maps: usize,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub offset: f64,
    pub interp: Vec<f64>,
    pub src_dets: Option<PathBuf>,
    pub tgt_dets: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for UdaSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 500,
            lr: 0.1,
            grid: DEFAULT_GRID,
            lambda: DEFAULT_LAMBDA,
            l_det: 1.0,
            maps: 10,
            width: 32,
            height: 32,
            classes: 1,
            offset: 1.0,
            interp: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            src_dets: None,
            tgt_dets: None,
            out: None,
        }
    }
}

fn maps_from_dets(path: &Path, s: &UdaSettings) -> Result<Vec<UncertaintyMap>> {
    let frames = load_frames(path, None)?;
    frames
        .par_iter()
        .map(|f| {
            frame_mcdo_map(f.first_passes(None)?, s.height, s.width, s.classes)
                .with_context(|| format!("{}: frame {:?}", path.display(), f.id))
        })
        .collect()
}

pub fn run(args: &UdaArgs, file: Option<&Value>) -> Result<RunRecord> {
    let r = resolve::<UdaSettings, _>("uda-sim", file, args)?;
    let s = &r.value;
    if s.lambda < 0.0 || !s.lambda.is_finite() {
        anyhow::bail!("lambda must be finite and non-negative");
    }
    if s.interp.iter().any(|t| !(0.0..=1.0).contains(t)) {
        anyhow::bail!("interpolation weights must lie in [0, 1]");
    }
    let mut inputs = Inputs::default();
    let (src, tgt) = match (&s.src_dets, &s.tgt_dets) {
        (Some(a), Some(b)) => {
            inputs.add(a)?;
            inputs.add(b)?;
            (maps_from_dets(a, s)?, maps_from_dets(b, s)?)
        }
        (None, None) => (
            fixture_maps(s.seed, 0, s.maps, s.height, s.width, s.offset)?,
            fixture_maps(s.seed, 1, s.maps, s.height, s.width, 0.0)?,
        ),
        _ => return Err(UsageError("--src-dets and --tgt-dets go together".into()).into()),
    };
    let n = src.len().min(tgt.len());
    let cfg = TrainConfig {
        steps: s.steps,
        lr: s.lr,
        grid: s.grid,
        seed: s.seed,
    };
    let src_feats = pool_all(&src[..n], s.grid)?;
    if n < driftbench::uda::MIN_MAPS_PER_DOMAIN {
        anyhow::bail!("need at least {} maps per domain, got {n}", driftbench::uda::MIN_MAPS_PER_DOMAIN);
    }

    let runs = s
        .interp
        .par_iter()
        .map(|&t| {
            let moved = src[..n]
                .iter()
                .zip(&tgt[..n])
                .map(|(a, b)| interpolate_maps(b, a, t))
                .collect::<driftbench::Result<Vec<_>>>()?;
            let tgt_feats = pool_all(&moved, s.grid)?;
            let res = train_on_features(&src_feats, &tgt_feats, &cfg)?;
            let d = &res.discriminator;
            let ps = src_feats.iter().map(|f| disc_forward(d, f)).collect::<driftbench::Result<Vec<_>>>()?;
            let pt = tgt_feats.iter().map(|f| disc_forward(d, f)).collect::<driftbench::Result<Vec<_>>>()?;
            let losses = total_loss(s.l_det, adv_loss(&ps, &pt)?, s.lambda);
            Ok((t, res, losses))
        })
        .collect::<Result<Vec<_>>>()?;

    let losses_path = s.out.as_ref().map(|o| o.join("losses.csv"));
    let mut w = csv_writer(output(losses_path.as_deref())?);
    w.write_record(["interp", "accuracy", "l_detection", "l_adv", "lambda", "l_total"])?;
    for (t, res, l) in &runs {
        w.write_record([t, &res.final_accuracy(), &l.l_detection, &l.l_adv, &l.lambda, &l.l_total].map(|v| v.to_string()))?;
    }
    w.flush()?;
    if let Some(out) = &s.out {
        let mut w = csv_writer(output(Some(&out.join("trace.csv")))?);
        w.write_record(["interp", "step", "accuracy", "loss"])?;
        for (t, res, _) in &runs {
            for (k, (a, l)) in res.accuracy.iter().zip(&res.loss).enumerate() {
                w.write_record([t.to_string(), (k + 1).to_string(), a.to_string(), l.to_string()])?;
            }
        }
        w.flush()?;
    }

    Ok(RunRecord {
        default_path: manifest_beside(s.out.as_deref(), true, "uda-sim"),
        config: r.json,
        sources: r.sources,
        inputs,
        seed: Some(s.seed),
    })
}
