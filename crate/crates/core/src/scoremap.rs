//! Pixel-wise score maps and the MCDO-map uncertainty.
//!
//! Each inference pass is turned into an `H × W × (C+1)` score map: every
//! detection adds its score to its class channel and the complement to the
//! background channel (channel `C`) for every pixel it covers. Pixels no
//! detection touches become one-hot background, and each pixel is then
//! softmax-normalized. Across passes the maps are reduced to an element-wise
//! mean and population standard deviation; the MCDO-map stacks the entropy of
//! the mean map with the channel-summed standard deviation.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::encode_pgm16;
use crate::geometry::{intersects_image, Detection};

pub use crate::geometry::{rasterize, PixelRect};

/// Dense `height × width × channels` tensor, pixel-major (channels innermost).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    pub fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of channels, `C + 1` for a score map.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel vector of pixel `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let k = (y * self.width + x) * self.channels;
        &self.data[k..k + self.channels]
    }

    fn same_shape(&self, other: &ScoreMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Builds the softmax-normalized score map of one pass.
pub fn build_score_map(
    dets: &[Detection],
    height: usize,
    width: usize,
    classes: usize,
) -> Result<ScoreMap> {
    if classes == 0 {
        return Err(Error::InvalidArgument("number of classes must be at least 1".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("image has zero size".into()));
    }
    let ch = classes + 1;
    let bg = classes;
    let mut data = vec![0.0f64; height * width * ch];
    for d in dets {
        let c = d.class_id as usize;
        if c >= classes {
            return Err(Error::InvalidArgument(format!(
                "class {c} out of range for {classes} classes"
            )));
        }
        if !intersects_image(&d.bbox, height, width) {
            return Err(Error::InvalidArgument(format!(
                "box {:?} lies fully outside the {width}x{height} image",
                d.bbox.to_array()
            )));
        }
        let rect = rasterize(&d.bbox, height, width);
        for y in rect.y0..rect.y1 {
            let row = y * width;
            for x in rect.x0..rect.x1 {
                let px = &mut data[(row + x) * ch..(row + x + 1) * ch];
                px[c] += d.score;
                px[bg] += 1.0 - d.score;
            }
        }
    }
    for px in data.chunks_exact_mut(ch) {
        if px.iter().all(|&v| v == 0.0) {
            px[bg] = 1.0;
        }
        softmax_in_place(px);
    }
    ScoreMap::from_raw(height, width, ch, data)
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Element-wise mean and population standard deviation over passes.
///
/// Deviations are accumulated relative to the first map, so identical passes
/// give a mean equal to that map and a standard deviation of exactly zero.
pub fn aggregate_passes(maps: &[ScoreMap]) -> Result<(ScoreMap, ScoreMap)> {
    if maps.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "at least 2 passes are required, got {}",
            maps.len()
        )));
    }
    let first = &maps[0];
    if let Some(i) = maps.iter().position(|m| !m.same_shape(first)) {
        return Err(Error::ShapeMismatch(format!(
            "pass {i} is {}x{}x{}, pass 0 is {}x{}x{}",
            maps[i].height, maps[i].width, maps[i].channels, first.height, first.width, first.channels
        )));
    }
    let n = maps.len() as f64;
    let mut mean = first.data.clone();
    let mut shift = vec![0.0f64; mean.len()];
    for m in &maps[1..] {
        for ((s, &v), &base) in shift.iter_mut().zip(&m.data).zip(&first.data) {
            *s += v - base;
        }
    }
    for (m, s) in mean.iter_mut().zip(&shift) {
        *m += s / n;
    }
    let mut var = vec![0.0f64; mean.len()];
    for m in maps {
        for ((acc, &v), &mu) in var.iter_mut().zip(&m.data).zip(&mean) {
            let r = v - mu;
            *acc += r * r;
        }
    }
    let std: Vec<f64> = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok((
        ScoreMap::from_raw(first.height, first.width, first.channels, mean)?,
        ScoreMap::from_raw(first.height, first.width, first.channels, std)?,
    ))
}

/// Natural-log entropy of every pixel's channel vector, with `0 · ln 0 = 0`.
pub fn entropy_map(mean: &ScoreMap) -> Result<Vec<f64>> {
    // rounding can push a near-uniform pixel a hair past the analytic maximum
    let cap = (mean.channels as f64).ln();
    mean.data
        .chunks_exact(mean.channels)
        .enumerate()
        .map(|(i, px)| {
            let mut h = 0.0;
            for &p in px {
                if p < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "negative probability {p} at pixel ({}, {})",
                        i % mean.width,
                        i / mean.width
                    )));
                }
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
            Ok(h.min(cap))
        })
        .collect()
}

/// Two-channel uncertainty map: entropy of the mean score map, and the
/// standard deviation summed over score channels.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    height: usize,
    width: usize,
    entropy: Vec<f64>,
    std_sum: Vec<f64>,
}

impl UncertaintyMap {
    pub fn new(height: usize, width: usize, entropy: Vec<f64>, std_sum: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if entropy.len() != n || std_sum.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "channels of length {} and {} for a {height}x{width} map",
                entropy.len(),
                std_sum.len()
            )));
        }
        Ok(Self {
            height,
            width,
            entropy,
            std_sum,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn entropy(&self) -> &[f64] {
        &self.entropy
    }

    pub fn std_sum(&self) -> &[f64] {
        &self.std_sum
    }

    /// Channel 0 is entropy, channel 1 is summed std.
    pub fn channel(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.entropy,
            1 => &self.std_sum,
            _ => panic!("uncertainty maps have two channels, asked for {c}"),
        }
    }

    pub fn map_channels(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            entropy: self.entropy.iter().map(|&v| f(v)).collect(),
            std_sum: self.std_sum.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub fn mcdo_map(maps: &[ScoreMap]) -> Result<UncertaintyMap> {
    let (mean, std) = aggregate_passes(maps)?;
    let entropy = entropy_map(&mean)?;
    let std_sum = std
        .data
        .chunks_exact(std.channels)
        .map(|px| px.iter().sum())
        .collect();
    UncertaintyMap::new(mean.height, mean.width, entropy, std_sum)
}

/// MCDO-map of one frame straight from its per-pass detections.
pub fn frame_mcdo_map<'a, I>(passes: I, height: usize, width: usize, classes: usize) -> Result<UncertaintyMap>
where
    I: IntoIterator<Item = &'a [Detection]>,
{
    let maps = passes
        .into_iter()
        .map(|dets| build_score_map(dets, height, width, classes))
        .collect::<Result<Vec<_>>>()?;
    mcdo_map(&maps)
}

/// Pixel mean of `entropy + summed std`.
pub fn mcdo_map_scalar(map: &UncertaintyMap) -> Result<f64> {
    let n = map.entropy.len();
    if n == 0 {
        return Err(Error::EmptyInput("uncertainty map has no pixels"));
    }
    let total: f64 = map
        .entropy
        .iter()
        .zip(&map.std_sum)
        .map(|(h, s)| h + s)
        .sum();
    Ok(total / n as f64)
}

/// Dataset-level scalar: mean of per-frame scalars. The values are summed in
/// sorted order so the result does not depend on frame order.
pub fn dataset_scalar(frame_scalars: &[f64]) -> Result<f64> {
    if frame_scalars.is_empty() {
        return Err(Error::EmptyInput("no frames"));
    }
    let mut v = frame_scalars.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Sidecar describing a fixed-point map dump.
#[derive(Debug, Clone, Serialize)]
pub struct MapDumpInfo {
    pub width: usize,
    pub height: usize,
    /// Stored sample = round(value × scale), saturating at 65535.
    pub scale: f64,
    pub files: [String; 2],
    pub channels: [&'static str; 2],
}

pub const DEFAULT_DUMP_SCALE: f64 = 10_000.0;

fn quantize(values: &[f64], scale: f64) -> Vec<u16> {
    values
        .iter()
        .map(|v| (v * scale).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect()
}

/// Writes `<stem>_entropy.pgm`, `<stem>_std.pgm` (16-bit) and `<stem>_map.json`.
pub fn dump_uncertainty_map(map: &UncertaintyMap, dir: &Path, stem: &str, scale: f64) -> Result<()> {
    let files = [format!("{stem}_entropy.pgm"), format!("{stem}_std.pgm")];
    for (c, name) in files.iter().enumerate() {
        let bytes = encode_pgm16(map.width, map.height, &quantize(map.channel(c), scale))?;
        fs::write(dir.join(name), bytes)?;
    }
    let info = MapDumpInfo {
        width: map.width,
        height: map.height,
        scale,
        files,
        channels: ["entropy", "std_sum"],
    };
    let mut json = serde_json::to_vec_pretty(&info).map_err(|e| Error::Io(e.into()))?;
    json.push(b'\n');
    fs::write(dir.join(format!("{stem}_map.json")), json)?;
    Ok(())
}
