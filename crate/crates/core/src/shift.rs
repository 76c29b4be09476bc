//! Cross-domain analysis: reference normalization, Pearson correlation,
//! feature-histogram KL divergence and grad-loss aggregation.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::{csv_writer, FeatureVectorSet, GradLossRecord};

/// Additive floor applied to every histogram bin before renormalizing.
pub const SMOOTHING: f64 = 1e-10;

/// Values of one metric across domains, in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSeries {
    pub name: String,
    pub values: Vec<(String, f64)>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, values: Vec<(String, f64)>) -> Result<Self> {
        if let Some((d, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value {v} for domain {d}")));
        }
        Ok(Self {
            name: name.into(),
            values,
        })
    }

    pub fn get(&self, domain: &str) -> Option<f64> {
        self.values.iter().find(|(d, _)| d == domain).map(|(_, v)| *v)
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.values.iter().map(|(d, _)| d.as_str())
    }

    pub fn raw(&self) -> Vec<f64> {
        self.values.iter().map(|(_, v)| *v).collect()
    }
}

/// `(M - ref) / ref` for every value.
pub fn normalize_metric(series: &MetricSeries, reference: f64) -> Result<MetricSeries> {
    if reference == 0.0 || !reference.is_finite() {
        return Err(Error::UndefinedNormalization);
    }
    Ok(MetricSeries {
        name: series.name.clone(),
        values: series
            .values
            .iter()
            .map(|(d, v)| (d.clone(), (v - reference) / reference))
            .collect(),
    })
}

/// Inverse of [`normalize_metric`].
pub fn denormalize_metric(series: &MetricSeries, reference: f64) -> MetricSeries {
    MetricSeries {
        name: series.name.clone(),
        values: series
            .values
            .iter()
            .map(|(d, v)| (d.clone(), v * reference + reference))
            .collect(),
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("series of lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::DegenerateSeries);
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Symmetric matrix of pairwise Pearson coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Square labelled CSV: header `metric,<names...>`, one row per metric.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv_writer(w);
        let header: Vec<&str> = std::iter::once("metric")
            .chain(self.names.iter().map(String::as_str))
            .collect();
        out.write_record(&header).map_err(csv_err)?;
        for (name, row) in self.names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(f64::to_string));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn correlation_matrix(series: &[MetricSeries]) -> Result<CorrelationMatrix> {
    let Some(first) = series.first() else {
        return Err(Error::EmptyInput("no metric series"));
    };
    let domains: Vec<&str> = first.domains().collect();
    let aligned = series
        .iter()
        .map(|s| {
            if s.values.len() != domains.len() {
                return Err(Error::ShapeMismatch(format!(
                    "series {:?} covers {} domains, {:?} covers {}",
                    s.name,
                    s.values.len(),
                    first.name,
                    domains.len()
                )));
            }
            domains
                .iter()
                .map(|d| {
                    s.get(d).ok_or_else(|| {
                        Error::ShapeMismatch(format!("series {:?} lacks domain {d:?}", s.name))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let k = series.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let r = pearson(&aligned[i], &aligned[j])?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: series.iter().map(|s| s.name.clone()).collect(),
        values,
    })
}

/// Smoothed probability histogram over explicit bin edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    edges: Vec<f64>,
    probs: Vec<f64>,
}

impl Histogram {
    /// Wraps explicit probabilities (no smoothing is applied).
    pub fn from_probs(edges: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        validate_edges(&edges, probs.len())?;
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities must be non-negative and sum to 1, sum is {sum}"
            )));
        }
        Ok(Self { edges, probs })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn validate_edges(edges: &[f64], n_bins: usize) -> Result<()> {
    if n_bins < 2 || edges.len() != n_bins + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} edges for {n_bins} bins (need at least 2 bins and bins + 1 edges)",
            edges.len()
        )));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument("bin edges must be finite and strictly ascending".into()));
    }
    Ok(())
}

/// Equal-width edges spanning the pooled range of every set. A constant
/// range is widened by 0.5 on each side.
pub fn shared_edges(sets: &[&FeatureVectorSet], n_bins: usize) -> Result<Vec<f64>> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {n_bins}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in sets {
        for &v in s.values() {
            lo = lo.min(v as f64);
            hi = hi.max(v as f64);
        }
    }
    if !lo.is_finite() {
        return Err(Error::EmptyFeatureSet);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let mut edges: Vec<f64> = (0..n_bins)
        .map(|i| lo + (hi - lo) * (i as f64 / n_bins as f64))
        .collect();
    edges.push(hi);
    Ok(edges)
}

/// Histogram of every component of every vector, pooled. Without explicit
/// `edges`, the set's own range is used.
pub fn histogram(features: &FeatureVectorSet, n_bins: usize, edges: Option<&[f64]>) -> Result<Histogram> {
    if features.is_empty() {
        return Err(Error::EmptyFeatureSet);
    }
    let edges = match edges {
        Some(e) => e.to_vec(),
        None => shared_edges(&[features], n_bins)?,
    };
    validate_edges(&edges, n_bins)?;
    let mut counts = vec![0u64; n_bins];
    for &v in features.values() {
        let v = v as f64;
        // index of the first interior edge above v; out-of-range values land in the end bins
        let bin = edges[1..n_bins].partition_point(|&e| e <= v);
        counts[bin] += 1;
    }
    let total = features.values().len() as f64;
    let norm = 1.0 + n_bins as f64 * SMOOTHING;
    let probs = counts
        .iter()
        .map(|&c| (c as f64 / total + SMOOTHING) / norm)
        .collect();
    Ok(Histogram { edges, probs })
}

/// `D_KL(target ‖ source) = Σ p_t ln(p_t / p_s)`, natural log.
pub fn kl_divergence(target: &Histogram, source: &Histogram) -> Result<f64> {
    if target.edges != source.edges {
        return Err(Error::ShapeMismatch("histograms have different bin edges".into()));
    }
    let mut kl = 0.0;
    for (&pt, &ps) in target.probs.iter().zip(&source.probs) {
        if pt == 0.0 {
            continue;
        }
        if ps == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pt * (pt / ps).ln();
    }
    // Gibbs' inequality; rounding can leave a tiny negative residue
    Ok(kl.max(0.0))
}

/// KL divergence of the target features from the source features over
/// shared edges.
pub fn feature_kl(source: &FeatureVectorSet, target: &FeatureVectorSet, n_bins: usize) -> Result<f64> {
    let edges = shared_edges(&[source, target], n_bins)?;
    let hs = histogram(source, n_bins, Some(&edges))?;
    let ht = histogram(target, n_bins, Some(&edges))?;
    kl_divergence(&ht, &hs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradLossSummary {
    pub loc_mean: f64,
    pub cls_mean: f64,
    pub detections: usize,
}

/// Means of the localization and classification grad-loss terms over all
/// detections of all records.
pub fn ingest_grad_loss(records: &[GradLossRecord]) -> Result<GradLossSummary> {
    let all = records.iter().flat_map(|r| &r.detections);
    let n = all.clone().count();
    if n == 0 {
        return Err(Error::EmptyInput("no grad-loss scalars"));
    }
    let loc = all.clone().map(|g| g.loc).sum::<f64>() / n as f64;
    let cls = all.map(|g| g.cls).sum::<f64>() / n as f64;
    Ok(GradLossSummary {
        loc_mean: loc,
        cls_mean: cls,
        detections: n,
    })
}
