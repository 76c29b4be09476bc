use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// CSV writer with LF record terminators.
pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Shortest round-tripping decimal for present values, empty for absent ones.
pub fn format_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Pretty JSON with a trailing newline. Key order follows struct field order.
pub fn write_json_pretty<T: Serialize>(value: &T, mut w: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    Ok(())
}
