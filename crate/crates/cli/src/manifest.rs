use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::Layer;

/// SHA-256 digests of the files a run declared as inputs.
#[derive(Debug, Default)]
pub struct Inputs {
    digests: BTreeMap<String, String>,
}

impl Inputs {
    pub fn add(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.digests
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }
}

/// What a subcommand hands back for its manifest.
pub struct RunRecord {
    pub config: Value,
    pub sources: BTreeMap<String, Layer>,
    pub inputs: Inputs,
    pub seed: Option<u64>,
    /// Where the manifest goes unless `--manifest` overrides it.
    pub default_path: PathBuf,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    toolkit_version: &'static str,
    config_file: Option<String>,
    config: &'a Value,
    config_sources: &'a BTreeMap<String, Layer>,
    inputs: &'a BTreeMap<String, String>,
    seed: Option<u64>,
    threads: usize,
    wall_time_s: f64,
}

pub fn write_manifest(
    path: &Path,
    subcommand: &str,
    config_file: Option<&Path>,
    rec: &RunRecord,
    threads: usize,
    wall_time_s: f64,
) -> Result<()> {
    let m = RunManifest {
        subcommand,
        toolkit_version: env!("CARGO_PKG_VERSION"),
        config_file: config_file.map(|p| p.display().to_string()),
        config: &rec.config,
        config_sources: &rec.sources,
        inputs: &rec.inputs.digests,
        seed: rec.seed,
        threads,
        wall_time_s,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path).with_context(|| format!("writing manifest {}", path.display()))?;
    driftbench::formats::write_json_pretty(&m, file)?;
    Ok(())
}

/// `<file>.manifest.json` beside a file output, `manifest.json` inside a
/// directory output, or `driftbench-<subcommand>.manifest.json` in the
/// working directory.
pub fn manifest_beside(out: Option<&Path>, is_dir: bool, subcommand: &str) -> PathBuf {
    match out {
        Some(dir) if is_dir => dir.join("manifest.json"),
        Some(file) => {
            let mut s = file.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("driftbench-{subcommand}.manifest.json")),
    }
}
