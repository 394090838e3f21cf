//! CSV traces and the JSON summary of a run.

use std::fs;
use std::path::Path;

use super::run::{RunOutput, TraceGroup};
use super::HarnessError;

fn write_group(dir: &Path, g: &TraceGroup) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", g.name)))?;
    w.write_record(&g.header)?;
    for row in &g.rows {
        // `{}` prints the shortest string that round-trips
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every trace group as `<name>.csv` plus `summary.json` into `dir`,
/// creating it if needed.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    for g in &out.traces {
        write_group(dir, g)?;
    }
    let json = serde_json::to_string_pretty(&out.summary).map_err(|e| HarnessError::Io(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}
