use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use driftbench::formats::{read_features, write_json_pretty};
use driftbench::shift::feature_kl;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::output;
use crate::config::resolve;
use crate::data::{require, UsageError};
use crate::manifest::{manifest_beside, Inputs, RunRecord};

#[derive(Args, Serialize)]
pub struct KlArgs {
    /// Source-domain FVEC file
    #[arg(long)]
    features_src: Option<PathBuf>,
    /// Target-domain FVEC file; repeat for several targets
    #[arg(long)]
    features_tgt: Option<Vec<PathBuf>>,
    /// Histogram bins over the pooled value range [default: 64]
    #[arg(long)]
    bins: Option<usize>,
    /// Also write the results as JSON [default: none]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlSettings {
    pub features_src: Option<PathBuf>,
    pub features_tgt: Vec<PathBuf>,
    pub bins: usize,
    pub out: Option<PathBuf>,
}

impl Default for KlSettings {
    fn default() -> Self {
        Self {
            features_src: None,
            features_tgt: Vec::new(),
            bins: 64,
            out: None,
        }
    }
}

pub fn run(args: &KlArgs, file: Option<&Value>) -> Result<RunRecord> {
    let r = resolve::<KlSettings, _>("klcorr", file, args)?;
    let s = &r.value;
    let src_path = require(s.features_src.as_deref(), "features-src")?;
    if s.features_tgt.is_empty() {
        return Err(UsageError("missing required option --features-tgt".into()).into());
    }
    let read = |p: &PathBuf| read_features(p).with_context(|| format!("in {}", p.display()));
    let src = read(&src_path.to_path_buf())?;
    let kls = s
        .features_tgt
        .par_iter()
        .map(|p| {
            let tgt = read(p)?;
            if tgt.dim() != src.dim() {
                anyhow::bail!("{}: dimension {} differs from source dimension {}", p.display(), tgt.dim(), src.dim());
            }
            Ok((tgt.domain_id.clone(), feature_kl(&src, &tgt, s.bins)?))
        })
        .collect::<Result<Vec<_>>>()?;

    if let [(_, kl)] = kls.as_slice() {
        println!("{kl}");
    } else {
        for (d, kl) in &kls {
            println!("{d}\t{kl}");
        }
    }
    if let Some(out) = &s.out {
        let targets: Vec<Value> = kls.iter().map(|(d, kl)| json!({"domain": d, "kl": kl})).collect();
        let doc = json!({"source": src.domain_id, "bins": s.bins, "targets": targets});
        write_json_pretty(&doc, output(Some(out))?)?;
    }

    let mut inputs = Inputs::default();
    inputs.add(src_path)?;
    for p in &s.features_tgt {
        inputs.add(p)?;
    }
    Ok(RunRecord {
        default_path: manifest_beside(s.out.as_deref(), false, "klcorr"),
        config: r.json,
        sources: r.sources,
        inputs,
        seed: None,
    })
}
