use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use driftbench::formats::{csv_writer, read_grad_loss};
use driftbench::shift::{correlation_matrix, ingest_grad_loss, normalize_metric, MetricSeries};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::output;
use crate::config::resolve;
use crate::data::UsageError;
use crate::manifest::{manifest_beside, Inputs, RunRecord};

#[derive(Args, Serialize)]
pub struct ReportArgs {
    /// Wide CSV: a `domain` column, then one column per metric
    #[arg(long)]
    series: Option<PathBuf>,
    /// Grad-loss JSONL per domain (domain = file stem); repeatable
    #[arg(long)]
    grad_loss: Option<Vec<PathBuf>>,
    /// Normalize every metric against this domain's value [default: none]
    #[arg(long)]
    reference: Option<String>,
    /// Correlation matrix CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Normalized table CSV [default: none]
    #[arg(long)]
    normalized_out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub series: Option<PathBuf>,
    pub grad_loss: Vec<PathBuf>,
    pub reference: Option<String>,
    pub out: Option<PathBuf>,
    pub normalized_out: Option<PathBuf>,
}

fn read_series(path: &Path) -> Result<Vec<MetricSeries>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("domain") || header.len() < 2 {
        anyhow::bail!("header must be `domain,<metric>,...`");
    }
    let mut cols: Vec<Vec<(String, f64)>> = vec![Vec::new(); header.len() - 1];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let domain = rec.get(0).unwrap_or_default().to_string();
        for (k, col) in cols.iter_mut().enumerate() {
            let cell = rec.get(k + 1).unwrap_or_default();
            let v: f64 = cell
                .trim()
                .parse()
                .with_context(|| format!("line {line}: {:?} is not a number", cell))?;
            col.push((domain.clone(), v));
        }
    }
    header
        .iter()
        .skip(1)
        .zip(cols)
        .map(|(name, values)| Ok(MetricSeries::new(name, values)?))
        .collect()
}

fn write_table(series: &[MetricSeries], path: &Path) -> Result<()> {
    let mut w = csv_writer(output(Some(path))?);
    let mut header = vec!["domain".to_string()];
    header.extend(series.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for d in series[0].domains() {
        let mut rec = vec![d.to_string()];
        rec.extend(series.iter().map(|s| s.get(d).map_or_else(String::new, |v| v.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &ReportArgs, file: Option<&Value>) -> Result<RunRecord> {
    let r = resolve::<ReportSettings, _>("report", file, args)?;
    let s = &r.value;
    if s.series.is_none() && s.grad_loss.is_empty() {
        return Err(UsageError("need --series or --grad-loss".into()).into());
    }
    let mut inputs = Inputs::default();
    let mut series = Vec::new();
    if let Some(p) = &s.series {
        series = read_series(p).with_context(|| format!("in {}", p.display()))?;
        inputs.add(p)?;
    }
    if !s.grad_loss.is_empty() {
        let mut loc = Vec::new();
        let mut cls = Vec::new();
        for p in &s.grad_loss {
            let sum = ingest_grad_loss(&read_grad_loss(p).with_context(|| format!("in {}", p.display()))?)
                .with_context(|| format!("in {}", p.display()))?;
            let domain = p
                .file_stem()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            loc.push((domain.clone(), sum.loc_mean));
            cls.push((domain, sum.cls_mean));
            inputs.add(p)?;
        }
        series.push(MetricSeries::new("grad_loss_loc", loc)?);
        series.push(MetricSeries::new("grad_loss_cls", cls)?);
    }

    if let Some(reference) = &s.reference {
        series = series
            .iter()
            .map(|m| {
                let v = m
                    .get(reference)
                    .with_context(|| format!("metric {:?} has no value for reference domain {reference:?}", m.name))?;
                normalize_metric(m, v).with_context(|| format!("metric {:?}", m.name))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(p) = &s.normalized_out {
        write_table(&series, p)?;
    }
    let matrix = correlation_matrix(&series)?;
    matrix.write_csv(output(s.out.as_deref())?)?;

    Ok(RunRecord {
        default_path: manifest_beside(s.out.as_deref(), false, "report"),
        config: r.json,
        sources: r.sources,
        inputs,
        seed: None,
    })
}
