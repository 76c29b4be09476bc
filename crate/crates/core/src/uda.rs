//! Adversarial alignment at desk scale: pooled uncertainty-map features, a
//! logistic discriminator with a hand-written gradient, the adversarial loss
//! and the total-loss composition.
//!
//! The discriminator is trained to minimize its own cross-entropy, i.e. the
//! adversarial loss with source labelled 1 and target labelled 0. The feature
//! side of the game (not simulated here beyond map interpolation) maximizes
//! the same quantity.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scoremap::UncertaintyMap;

pub const DEFAULT_GRID: usize = 4;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const PROB_CLAMP: f64 = 1e-7;

/// Per channel: mean, max, then `G×G` grid-cell means in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledFeatures {
    grid: usize,
    values: Vec<f64>,
}

impl PooledFeatures {
    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn pooled_len(grid: usize) -> usize {
    2 * (2 + grid * grid)
}

fn cell_bounds(i: usize, grid: usize, n: usize) -> (usize, usize) {
    let step = n / grid;
    let end = if i + 1 == grid { n } else { (i + 1) * step };
    (i * step, end)
}

pub fn pool(map: &UncertaintyMap, grid: usize) -> Result<PooledFeatures> {
    let (h, w) = (map.height(), map.width());
    if h == 0 || w == 0 {
        return Err(Error::EmptyInput("uncertainty map has no pixels"));
    }
    if grid == 0 || grid > h || grid > w {
        return Err(Error::InvalidArgument(format!(
            "grid {grid} does not fit a {h}x{w} map"
        )));
    }
    let mut values = Vec::with_capacity(pooled_len(grid));
    for c in 0..2 {
        let ch = map.channel(c);
        values.push(ch.iter().sum::<f64>() / ch.len() as f64);
        values.push(ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        for gy in 0..grid {
            let (y0, y1) = cell_bounds(gy, grid, h);
            for gx in 0..grid {
                let (x0, x1) = cell_bounds(gx, grid, w);
                let mut s = 0.0;
                for y in y0..y1 {
                    s += ch[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                values.push(s / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Ok(PooledFeatures { grid, values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyDiscriminator {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ToyDiscriminator {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    fn logit(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "features of length {} for a discriminator of dimension {}",
                f.len(),
                self.weights.len()
            )));
        }
        Ok(self.weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Probability that `f` comes from the source domain, clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn disc_forward(d: &ToyDiscriminator, f: &[f64]) -> Result<f64> {
    Ok(logistic(d.logit(f)?).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

fn mean_neg_ln(probs: &[f64], f: impl Fn(f64) -> f64) -> Result<f64> {
    let mut s = 0.0;
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
        s -= f(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)).ln();
    }
    Ok(s / probs.len() as f64)
}

/// `-mean ln D(src) - mean ln(1 - D(tgt))`.
pub fn adv_loss(src_probs: &[f64], tgt_probs: &[f64]) -> Result<f64> {
    if src_probs.is_empty() || tgt_probs.is_empty() {
        return Err(Error::EmptyInput("adversarial loss needs both domains"));
    }
    Ok(mean_neg_ln(src_probs, |p| p)? + mean_neg_ln(tgt_probs, |p| 1.0 - p)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_detection: f64,
    pub l_adv: f64,
    pub lambda: f64,
    pub l_total: f64,
}

pub fn total_loss(l_det: f64, l_adv: f64, lambda: f64) -> LossBreakdown {
    LossBreakdown {
        l_detection: l_det,
        l_adv,
        lambda,
        l_total: l_det - lambda * l_adv,
    }
}

/// Unclamped adversarial loss of `d` on pooled features, the discriminator's
/// training objective.
pub fn disc_objective(d: &ToyDiscriminator, src: &[Vec<f64>], tgt: &[Vec<f64>]) -> Result<f64> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::EmptyInput("training needs both domains"));
    }
    let mut ls = 0.0;
    for f in src {
        ls += softplus(-d.logit(f)?);
    }
    let mut lt = 0.0;
    for f in tgt {
        lt += softplus(d.logit(f)?);
    }
    Ok(ls / src.len() as f64 + lt / tgt.len() as f64)
}

/// Analytic gradient of [`disc_objective`]: `(p - y) f` averaged per domain.
/// Returns `(d weights, d bias)`.
pub fn disc_gradient(d: &ToyDiscriminator, src: &[Vec<f64>], tgt: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::EmptyInput("training needs both domains"));
    }
    let mut gw = vec![0.0; d.weights.len()];
    let mut gb = 0.0;
    for (set, label) in [(src, 1.0), (tgt, 0.0)] {
        let n = set.len() as f64;
        for f in set {
            let r = (logistic(d.logit(f)?) - label) / n;
            for (g, x) in gw.iter_mut().zip(f) {
                *g += r * x;
            }
            gb += r;
        }
    }
    Ok((gw, gb))
}

/// Worst relative disagreement between [`disc_gradient`] and central
/// differences of [`disc_objective`] over every parameter.
pub fn gradient_check(d: &ToyDiscriminator, src: &[Vec<f64>], tgt: &[Vec<f64>], step: f64) -> Result<f64> {
    let (gw, gb) = disc_gradient(d, src, tgt)?;
    let analytic: Vec<f64> = gw.into_iter().chain(std::iter::once(gb)).collect();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = d.clone();
        let mut minus = d.clone();
        if k < d.weights.len() {
            plus.weights[k] += step;
            minus.weights[k] -= step;
        } else {
            plus.bias += step;
            minus.bias -= step;
        }
        let numeric = (disc_objective(&plus, src, tgt)? - disc_objective(&minus, src, tgt)?) / (2.0 * step);
        let scale = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

/// Fraction of samples on the correct side of 0.5 (source iff `p > 0.5`).
pub fn accuracy(d: &ToyDiscriminator, src: &[Vec<f64>], tgt: &[Vec<f64>]) -> Result<f64> {
    let mut correct = 0usize;
    for f in src {
        correct += usize::from(logistic(d.logit(f)?) > 0.5);
    }
    for f in tgt {
        correct += usize::from(logistic(d.logit(f)?) <= 0.5);
    }
    Ok(correct as f64 / (src.len() + tgt.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub grid: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.1,
            grid: DEFAULT_GRID,
            seed: 0,
        }
    }
}

pub const MIN_MAPS_PER_DOMAIN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainResult {
    pub discriminator: ToyDiscriminator,
    /// Training-pool accuracy after each step.
    pub accuracy: Vec<f64>,
    pub loss: Vec<f64>,
}

impl TrainResult {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracy.last().copied().unwrap_or(0.5)
    }
}

pub fn pool_all(maps: &[UncertaintyMap], grid: usize) -> Result<Vec<Vec<f64>>> {
    maps.iter().map(|m| pool(m, grid).map(|p| p.values)).collect()
}

/// Full-batch gradient descent from small seeded weights.
pub fn train_discriminator(src_maps: &[UncertaintyMap], tgt_maps: &[UncertaintyMap], cfg: &TrainConfig) -> Result<TrainResult> {
    if src_maps.len() < MIN_MAPS_PER_DOMAIN || tgt_maps.len() < MIN_MAPS_PER_DOMAIN {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_MAPS_PER_DOMAIN} maps per domain, got {} and {}",
            src_maps.len(),
            tgt_maps.len()
        )));
    }
    let src = pool_all(src_maps, cfg.grid)?;
    let tgt = pool_all(tgt_maps, cfg.grid)?;
    train_on_features(&src, &tgt, cfg)
}

pub fn train_on_features(src: &[Vec<f64>], tgt: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainResult> {
    let dim = src.first().map_or(0, Vec::len);
    let mut rng = CounterRng::new(cfg.seed, 0x0d15c);
    let mut d = ToyDiscriminator {
        weights: (0..dim).map(|_| 0.01 * rng.normal()).collect(),
        bias: 0.0,
    };
    let mut acc = Vec::with_capacity(cfg.steps);
    let mut loss = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let (gw, gb) = disc_gradient(&d, src, tgt)?;
        for (w, g) in d.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * g;
        }
        d.bias -= cfg.lr * gb;
        acc.push(accuracy(&d, src, tgt)?);
        loss.push(disc_objective(&d, src, tgt)?);
    }
    Ok(TrainResult {
        discriminator: d,
        accuracy: acc,
        loss,
    })
}

/// `(1 - t)·a + t·b` channel-wise; `t = 1` reproduces `b`.
pub fn interpolate_maps(a: &UncertaintyMap, b: &UncertaintyMap, t: f64) -> Result<UncertaintyMap> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch("interpolating maps of different sizes".into()));
    }
    let lerp = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(&p, &q)| if t == 1.0 { q } else { (1.0 - t) * p + t * q })
            .collect()
    };
    UncertaintyMap::new(
        a.height(),
        a.width(),
        lerp(a.entropy(), b.entropy()),
        lerp(a.std_sum(), b.std_sum()),
    )
}

/// Noisy synthetic uncertainty maps: entropy around 0.5, summed std around
/// `0.2 + std_offset`, with a per-map level and per-pixel noise.
pub fn fixture_maps(seed: u64, domain: u64, count: usize, height: usize, width: usize, std_offset: f64) -> Result<Vec<UncertaintyMap>> {
    (0..count as u64)
        .map(|i| {
            let mut rng = CounterRng::keyed(seed, &[0x0f1c, domain, i]);
            let (le, ls) = (0.1 * rng.normal(), 0.1 * rng.normal());
            let n = height * width;
            let entropy = (0..n).map(|_| (0.5 + le + 0.05 * rng.normal()).max(0.0)).collect();
            let std_sum = (0..n)
                .map(|_| (0.2 + std_offset + ls + 0.05 * rng.normal()).max(0.0))
                .collect();
            UncertaintyMap::new(height, width, entropy, std_sum)
        })
        .collect()
}
