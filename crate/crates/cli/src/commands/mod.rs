pub mod dece;
pub mod eval;
pub mod klcorr;
pub mod mcdo;
pub mod report;
pub mod synth;
pub mod uda;

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::Result;

/// Opens `path` for writing, or stdout when absent.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(io::BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

pub fn check_iou(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        anyhow::bail!("{name} {v} outside (0, 1]");
    }
    Ok(())
}

pub fn bins_array(v: &[usize]) -> Result<[usize; 5]> {
    v.try_into()
        .map_err(|_| anyhow::anyhow!("expected 5 bin counts (score,cx,cy,w,h), got {}", v.len()))
}
