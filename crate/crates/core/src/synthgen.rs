//! Deterministic synthetic fixtures: banded segmentation maps, ground truth
//! and jittered per-pass detections, plus monotone shift ladders.
//!
//! All randomness comes from [`CounterRng`] streams keyed by
//! `(seed, purpose, domain, frame, object, pass)`, so each frame can be
//! generated independently, and changing one knob (say the tree miss rate)
//! leaves every unrelated draw untouched.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{
    write_detections, write_features, write_ground_truth, write_json_pretty, write_segmap, BgLabel,
    DetectionRecord, FeatureVectorSet, GroundTruthRecord, SegMapImage,
};
use crate::geometry::{BBox, Detection, GtBox};
use crate::rng::CounterRng;

const LAYOUT: u64 = 1;
const MISS: u64 = 2;
const JITTER: u64 = 3;
const FALSE_POS: u64 = 4;
const FP_JITTER: u64 = 5;
const SCORE: u64 = 6;
const FEATURES: u64 = 7;

pub const PRNG_NAME: &str = "splitmix64-counter";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Mixed into every detector-noise stream but not into the scene layout.
    pub domain: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub classes: u32,
    pub objects_per_frame: usize,
    /// Band fractions and object placement mix, `[sky, tree, ground]`.
    pub mix: [f64; 3],
    pub box_min: usize,
    pub box_max: usize,
    pub passes: u32,
    pub sigma_pos: f64,
    pub sigma_score: f64,
    pub base_score: f64,
    /// Object scores are drawn from `base_score - score_spread·U(0,1)`.
    pub score_spread: f64,
    /// Per background, `[sky, tree, ground]`.
    pub miss_rate: [f64; 3],
    /// Probability of one false positive per object slot.
    pub fp_rate: f64,
    pub fp_score_max: f64,
    pub frame_prefix: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            domain: 0,
            frames: 16,
            width: 128,
            height: 96,
            classes: 1,
            objects_per_frame: 4,
            mix: [0.4, 0.3, 0.3],
            box_min: 8,
            box_max: 24,
            passes: 8,
            sigma_pos: 0.0,
            sigma_score: 0.0,
            base_score: 1.0,
            score_spread: 0.0,
            miss_rate: [0.0; 3],
            fp_rate: 0.0,
            fp_score_max: 0.5,
            frame_prefix: "frame_".into(),
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("{name} {v} outside [0, 1]")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.frames == 0 || self.width == 0 || self.height == 0 || self.classes == 0 || self.passes == 0 {
            return bad("frames, width, height, classes and passes must be positive".into());
        }
        if self.mix.iter().any(|m| !(*m >= 0.0)) || (self.mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("mix {:?} must be non-negative and sum to 1", self.mix));
        }
        for (bg, r) in BgLabel::ALL.iter().zip(self.miss_rate) {
            check_rate(&format!("{bg} miss rate"), r)?;
        }
        check_rate("fp rate", self.fp_rate)?;
        check_rate("base score", self.base_score)?;
        check_rate("fp score max", self.fp_score_max)?;
        if !(self.score_spread >= 0.0) || self.score_spread > self.base_score {
            return bad(format!("score spread {} outside [0, base score]", self.score_spread));
        }
        if !(self.sigma_pos >= 0.0 && self.sigma_score >= 0.0) || !self.sigma_pos.is_finite() || !self.sigma_score.is_finite() {
            return bad("jitter sigmas must be finite and non-negative".into());
        }
        if self.box_min == 0 || self.box_min > self.box_max || self.box_min > self.width {
            return bad(format!(
                "box size range {}..={} does not fit width {}",
                self.box_min, self.box_max, self.width
            ));
        }
        for (bg, (m, (top, bottom))) in BgLabel::ALL.iter().zip(self.mix.iter().zip(self.bands())) {
            if *m > 0.0 && bottom <= top {
                return bad(format!("{bg} band has zero height at image height {}", self.height));
            }
        }
        Ok(())
    }

    /// Row ranges `[top, bottom)` of the sky, tree and ground bands.
    pub fn bands(&self) -> [(usize, usize); 3] {
        let h = self.height as f64;
        let b1 = (self.mix[0] * h).round() as usize;
        let b2 = (((self.mix[0] + self.mix[1]) * h).round() as usize).max(b1);
        [(0, b1), (b1, b2.min(self.height)), (b2.min(self.height), self.height)]
    }

    pub fn frame_id(&self, frame: usize) -> String {
        format!("{}{frame:05}", self.frame_prefix)
    }

    pub fn segmap(&self) -> SegMapImage {
        let mut labels = Vec::with_capacity(self.width * self.height);
        for (bg, (top, bottom)) in BgLabel::ALL.iter().zip(self.bands()) {
            labels.extend(std::iter::repeat(*bg).take((bottom - top) * self.width));
        }
        SegMapImage::new(self.width, self.height, labels).expect("bands cover the image")
    }
}

/// One generated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub frame_id: String,
    pub gts: Vec<GtBox>,
    /// Background band of every ground-truth box.
    pub gt_bands: Vec<BgLabel>,
    /// Detections of each pass, in pass order.
    pub passes: Vec<Vec<Detection>>,
}

fn pick_band(rng: &mut CounterRng, mix: &[f64; 3]) -> BgLabel {
    let u = rng.uniform();
    let mut acc = 0.0;
    for bg in BgLabel::ALL {
        acc += mix[bg.index()];
        if u < acc && mix[bg.index()] > 0.0 {
            return bg;
        }
    }
    // rounding left u above the cumulative sum: last band with mass
    *BgLabel::ALL.iter().rev().find(|b| mix[b.index()] > 0.0).expect("mix sums to 1")
}

/// Integer-pixel box fully inside `band`.
fn place_box(rng: &mut CounterRng, cfg: &ScenarioConfig, band: (usize, usize)) -> BBox {
    let w = rng.int_in(cfg.box_min as u64, cfg.box_max.min(cfg.width) as u64);
    let band_h = (band.1 - band.0) as u64;
    let h = rng.int_in(cfg.box_min.min(band_h as usize) as u64, cfg.box_max.min(band_h as usize) as u64);
    let x1 = rng.int_in(0, cfg.width as u64 - w);
    let y1 = rng.int_in(band.0 as u64, band.1 as u64 - h);
    BBox::new(x1 as f64, y1 as f64, (x1 + w) as f64, (y1 + h) as f64).expect("positive size")
}

/// Jittered copy of `b`, clamped to the image and kept at least one pixel wide.
fn jitter_box(rng: &mut CounterRng, b: &BBox, sigma: f64, width: usize, height: usize) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let (w, h) = (width as f64, height as f64);
    let mut c = [0.0; 4];
    for (v, base) in c.iter_mut().zip(b.to_array()) {
        *v = base + sigma * rng.normal();
    }
    let x1 = c[0].clamp(0.0, w - 1.0);
    let y1 = c[1].clamp(0.0, h - 1.0);
    let x2 = c[2].clamp(x1 + 1.0, w.max(x1 + 1.0));
    let y2 = c[3].clamp(y1 + 1.0, h.max(y1 + 1.0));
    BBox::new(x1, y1, x2, y2).expect("clamped to positive size")
}

fn pass_score(rng: &mut CounterRng, base: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return base;
    }
    (base + sigma * rng.normal()).clamp(0.0, 1.0)
}

/// Generates one frame. Pure in `(cfg, frame)`.
pub fn generate_frame(cfg: &ScenarioConfig, frame: usize) -> SynthFrame {
    let bands = cfg.bands();
    let (seed, dom, f) = (cfg.seed, cfg.domain, frame as u64);
    let mut gts = Vec::with_capacity(cfg.objects_per_frame);
    let mut gt_bands = Vec::with_capacity(cfg.objects_per_frame);
    let mut passes = vec![Vec::new(); cfg.passes as usize];

    for i in 0..cfg.objects_per_frame as u64 {
        let mut layout = CounterRng::keyed(seed, &[LAYOUT, f, i]);
        let bg = pick_band(&mut layout, &cfg.mix);
        let class_id = layout.int_in(0, cfg.classes as u64 - 1) as u32;
        let bbox = place_box(&mut layout, cfg, bands[bg.index()]);
        gts.push(GtBox { bbox, class_id });
        gt_bands.push(bg);

        if CounterRng::keyed(seed, &[MISS, dom, f, i]).bernoulli(cfg.miss_rate[bg.index()]) {
            continue;
        }
        let base = cfg.base_score - cfg.score_spread * CounterRng::keyed(seed, &[SCORE, dom, f, i]).uniform();
        for (p, dets) in passes.iter_mut().enumerate() {
            let mut rng = CounterRng::keyed(seed, &[JITTER, dom, f, i, p as u64]);
            let b = jitter_box(&mut rng, &bbox, cfg.sigma_pos, cfg.width, cfg.height);
            dets.push(Detection::new(b, class_id, pass_score(&mut rng, base, cfg.sigma_score)));
        }
    }

    for i in 0..cfg.objects_per_frame as u64 {
        let mut rng = CounterRng::keyed(seed, &[FALSE_POS, dom, f, i]);
        if !rng.bernoulli(cfg.fp_rate) {
            continue;
        }
        let bg = pick_band(&mut rng, &cfg.mix);
        let class_id = rng.int_in(0, cfg.classes as u64 - 1) as u32;
        let bbox = place_box(&mut rng, cfg, bands[bg.index()]);
        let base = cfg.fp_score_max * rng.uniform();
        for (p, dets) in passes.iter_mut().enumerate() {
            let mut rng = CounterRng::keyed(seed, &[FP_JITTER, dom, f, i, p as u64]);
            let b = jitter_box(&mut rng, &bbox, cfg.sigma_pos, cfg.width, cfg.height);
            dets.push(Detection::new(b, class_id, pass_score(&mut rng, base, cfg.sigma_score)));
        }
    }

    SynthFrame {
        frame_id: cfg.frame_id(frame),
        gts,
        gt_bands,
        passes,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub segmap: SegMapImage,
    pub frames: Vec<SynthFrame>,
}

pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    Ok(Scenario {
        config: cfg.clone(),
        segmap: cfg.segmap(),
        frames: (0..cfg.frames).map(|f| generate_frame(cfg, f)).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioManifest<'a> {
    pub generator: &'static str,
    pub version: &'static str,
    pub prng: &'static str,
    pub config: &'a ScenarioConfig,
    pub files: Vec<String>,
}

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GROUND_TRUTH_FILE: &str = "gt.jsonl";
pub const SEGMAP_DIR: &str = "segmaps";
pub const MANIFEST_FILE: &str = "scenario.json";

impl Scenario {
    pub fn detection_records(&self) -> Vec<DetectionRecord> {
        self.frames
            .iter()
            .flat_map(|f| {
                f.passes.iter().enumerate().map(|(p, d)| DetectionRecord {
                    frame_id: f.frame_id.clone(),
                    pass_id: p as u32,
                    detections: d.clone(),
                })
            })
            .collect()
    }

    pub fn gt_records(&self) -> Vec<GroundTruthRecord> {
        self.frames
            .iter()
            .map(|f| GroundTruthRecord {
                frame_id: f.frame_id.clone(),
                boxes: f.gts.clone(),
            })
            .collect()
    }

    pub fn detection_count(&self) -> usize {
        self.frames.iter().flat_map(|f| &f.passes).map(Vec::len).sum()
    }

    /// Writes detections, ground truth, one segmap per frame and a manifest.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let seg_dir = dir.join(SEGMAP_DIR);
        fs::create_dir_all(&seg_dir)?;
        write_detections(&self.detection_records(), dir.join(DETECTIONS_FILE))?;
        write_ground_truth(&self.gt_records(), dir.join(GROUND_TRUTH_FILE))?;
        // every frame shares one banded map: write it once, link the rest
        let mut first: Option<std::path::PathBuf> = None;
        for f in &self.frames {
            let path = seg_dir.join(format!("{}.pgm", f.frame_id));
            if path.exists() {
                fs::remove_file(&path)?;
            }
            match &first {
                Some(src) if fs::hard_link(src, &path).is_ok() => {}
                _ => write_segmap(&self.segmap, &path)?,
            }
            first.get_or_insert(path);
        }
        let manifest = ScenarioManifest {
            generator: "driftbench synthgen",
            version: env!("CARGO_PKG_VERSION"),
            prng: PRNG_NAME,
            config: &self.config,
            files: vec![
                DETECTIONS_FILE.into(),
                GROUND_TRUTH_FILE.into(),
                format!("{SEGMAP_DIR}/"),
            ],
        };
        write_json_pretty(&manifest, fs::File::create(dir.join(MANIFEST_FILE))?)
    }
}

/// How target domains drift away from the source as the knob grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftKnobs {
    /// Strictly increasing knob values, one target domain each.
    pub levels: Vec<f64>,
    /// Added to `sigma_pos` per knob unit.
    pub jitter_per_unit: f64,
    /// Added to every miss rate per knob unit, capped at 1.
    pub miss_per_unit: f64,
    /// Mean offset of the Gaussian feature vectors per knob unit.
    pub feature_offset_per_unit: f64,
    pub feature_dim: usize,
    pub feature_count: usize,
}

impl Default for ShiftKnobs {
    fn default() -> Self {
        Self {
            levels: vec![0.0, 1.0, 2.0],
            jitter_per_unit: 2.0,
            miss_per_unit: 0.0,
            feature_offset_per_unit: 0.5,
            feature_dim: 16,
            feature_count: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDomain {
    pub name: String,
    pub knob: f64,
    pub scenario: Scenario,
    pub features: FeatureVectorSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftLadder {
    pub source: SynthDomain,
    pub targets: Vec<SynthDomain>,
}

fn gaussian_features(seed: u64, domain: u64, name: &str, offset: f64, dim: usize, count: usize) -> Result<FeatureVectorSet> {
    let values = (0..count as u64)
        .flat_map(|i| {
            let mut rng = CounterRng::keyed(seed, &[FEATURES, domain, i]);
            (0..dim).map(move |_| (offset + rng.normal()) as f32)
        })
        .collect();
    let ids = (0..count).map(|i| format!("{name}_{i:05}")).collect();
    FeatureVectorSet::new(name, dim, values, ids)
}

/// Source domain (the config as given) plus one target per knob level.
/// Targets share the source scene layout; detector noise and features are
/// drawn from fresh streams.
pub fn shift_pair(cfg: &ScenarioConfig, knobs: &ShiftKnobs) -> Result<ShiftLadder> {
    if knobs.levels.is_empty() {
        return Err(Error::InvalidArgument("shift ladder needs at least one level".into()));
    }
    if knobs.levels.iter().any(|k| !(k.is_finite() && *k >= 0.0)) || knobs.levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(format!(
            "knob levels {:?} must be non-negative and strictly increasing",
            knobs.levels
        )));
    }
    if knobs.jitter_per_unit < 0.0 || knobs.miss_per_unit < 0.0 || knobs.feature_offset_per_unit < 0.0 {
        return Err(Error::InvalidArgument("knob slopes must be non-negative".into()));
    }
    if knobs.feature_dim == 0 || knobs.feature_count == 0 {
        return Err(Error::EmptyFeatureSet);
    }
    let domain = |idx: u64, name: String, knob: f64| -> Result<SynthDomain> {
        let mut c = cfg.clone();
        c.domain = cfg.domain.wrapping_add(idx);
        c.sigma_pos += knob * knobs.jitter_per_unit;
        for r in &mut c.miss_rate {
            *r = (*r + knob * knobs.miss_per_unit).min(1.0);
        }
        let features = gaussian_features(
            cfg.seed,
            c.domain,
            &name,
            knob * knobs.feature_offset_per_unit,
            knobs.feature_dim,
            knobs.feature_count,
        )?;
        Ok(SynthDomain {
            name,
            knob,
            scenario: generate(&c)?,
            features,
        })
    };
    let source = domain(0, "source".into(), 0.0)?;
    let targets = knobs
        .levels
        .iter()
        .enumerate()
        .map(|(i, &k)| domain(i as u64 + 1, format!("target{i}"), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ShiftLadder { source, targets })
}

impl SynthDomain {
    /// Writes the scenario into `dir/<name>/` and the features to
    /// `dir/<name>.fvec`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        self.scenario.write_to(&dir.join(&self.name))?;
        write_features(&self.features, dir.join(format!("{}.fvec", self.name)))
    }
}
