use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use driftbench::formats::write_json_pretty;
use driftbench::synthgen::{generate_frame, shift_pair, Scenario, ScenarioConfig, ShiftKnobs};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::resolve;
use crate::data::require;
use crate::manifest::{manifest_beside, Inputs, RunRecord};

#[derive(Args, Serialize)]
pub struct ScenarioFlags {
    /// Seed of every random stream [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Frames to generate [default: 16]
    #[arg(long)]
    frames: Option<usize>,
    /// Image width [default: 128]
    #[arg(long)]
    width: Option<usize>,
    /// Image height [default: 96]
    #[arg(long)]
    height: Option<usize>,
    /// Object classes [default: 1]
    #[arg(long)]
    classes: Option<u32>,
    /// Objects per frame [default: 4]
    #[arg(long = "objects")]
    objects_per_frame: Option<usize>,
    /// Sky,tree,ground band fractions and placement mix [default: 0.4,0.3,0.3]
    #[arg(long, value_delimiter = ',')]
    mix: Option<Vec<f64>>,
    /// Smallest box side in pixels [default: 8]
    #[arg(long)]
    box_min: Option<usize>,
    /// Largest box side in pixels [default: 24]
    #[arg(long)]
    box_max: Option<usize>,
    /// MC-dropout passes per frame [default: 8]
    #[arg(long)]
    passes: Option<u32>,
    /// Per-pass box jitter std in pixels [default: 0]
    #[arg(long)]
    sigma_pos: Option<f64>,
    /// Per-pass score jitter std [default: 0]
    #[arg(long)]
    sigma_score: Option<f64>,
    /// Highest object score [default: 1.0]
    #[arg(long)]
    base_score: Option<f64>,
    /// Object scores spread down from the base by up to this much [default: 0]
    #[arg(long)]
    score_spread: Option<f64>,
    /// Sky,tree,ground miss rates [default: 0,0,0]
    #[arg(long, value_delimiter = ',')]
    miss_rate: Option<Vec<f64>>,
    /// Probability of a false positive per object slot [default: 0]
    #[arg(long)]
    fp_rate: Option<f64>,
    /// Highest false-positive score [default: 0.5]
    #[arg(long)]
    fp_score_max: Option<f64>,
}

#[derive(Args, Serialize)]
pub struct LadderFlags {
    /// Knob levels of a shift ladder, strictly increasing [default: no ladder]
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Extra jitter std per knob unit [default: 2.0]
    #[arg(long)]
    jitter_per_unit: Option<f64>,
    /// Extra miss rate per knob unit [default: 0]
    #[arg(long)]
    miss_per_unit: Option<f64>,
    /// Feature mean offset per knob unit [default: 0.5]
    #[arg(long)]
    feature_offset_per_unit: Option<f64>,
    /// Feature vector dimension [default: 16]
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Feature vectors per domain [default: 256]
    #[arg(long)]
    feature_count: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    scenario: ScenarioFlags,
    #[command(flatten)]
    #[serde(skip_serializing_if = "LadderFlags::is_empty")]
    ladder: LadderFlags,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl LadderFlags {
    fn is_empty(&self) -> bool {
        self.levels.is_none()
            && self.jitter_per_unit.is_none()
            && self.miss_per_unit.is_none()
            && self.feature_offset_per_unit.is_none()
            && self.feature_dim.is_none()
            && self.feature_count.is_none()
    }
}

#[derive(Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub scenario: ScenarioConfig,
    pub ladder: Option<ShiftKnobs>,
    pub out: Option<PathBuf>,
}

pub fn run(args: &SynthArgs, file: Option<&Value>) -> Result<RunRecord> {
    let r = resolve::<SynthSettings, _>("synthgen", file, args)?;
    let s = &r.value;
    let out = require(s.out.as_deref(), "out")?;
    let cfg = &s.scenario;
    cfg.validate()?;
    fs::create_dir_all(out)?;
    match &s.ladder {
        None => {
            let frames = (0..cfg.frames)
                .into_par_iter()
                .map(|f| generate_frame(cfg, f))
                .collect();
            let sc = Scenario {
                config: cfg.clone(),
                segmap: cfg.segmap(),
                frames,
            };
            sc.write_to(out)?;
            println!("{} frames, {} detections", cfg.frames, sc.detection_count());
        }
        Some(knobs) => {
            let ladder = shift_pair(cfg, knobs)?;
            ladder.source.write_to(out)?;
            for t in &ladder.targets {
                t.write_to(out)?;
            }
            let domains: Vec<Value> = std::iter::once(&ladder.source)
                .chain(&ladder.targets)
                .map(|d| json!({"name": d.name, "knob": d.knob, "sigma_pos": d.scenario.config.sigma_pos}))
                .collect();
            write_json_pretty(&json!({"domains": domains}), fs::File::create(out.join("ladder.json"))?)?;
            println!("{} target domains", ladder.targets.len());
        }
    }
    Ok(RunRecord {
        default_path: manifest_beside(Some(out), true, "synthgen"),
        config: r.json,
        sources: r.sources,
        inputs: Inputs::default(),
        seed: Some(cfg.seed),
    })
}
