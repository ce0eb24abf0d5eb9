//! Merging several metrics CSVs into one comparison table, one row per run.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::invalid;

pub const COLUMNS: [&str; 6] = ["auc", "rmse", "delta_dp", "delta_eo", "delta_cp", "leakage_auc"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub run: String,
    /// Aligned with [`COLUMNS`]; `None` when the input lacks the column.
    pub values: Vec<Option<String>>,
}

/// Picks the `mean` row when present, the last row otherwise.
pub fn summarize(run: String, csv_text: &str) -> Result<RunRow> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut chosen = None;
    for rec in r.records() {
        let rec = rec?;
        let is_mean = rec.get(0) == Some("mean");
        chosen = Some(rec);
        if is_mean {
            break;
        }
    }
    let rec = chosen.ok_or_else(|| invalid(format!("{run}: metrics file has no rows")))?;
    let values = COLUMNS
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .and_then(|i| rec.get(i))
                .map(str::to_owned)
        })
        .collect();
    Ok(RunRow { run, values })
}

/// A directory stands for its `metrics.csv` (or `metrics_raw.csv`) and is
/// named after itself; a file is named after its parent directory and stem.
pub fn resolve_input(p: &Path) -> Result<(String, PathBuf)> {
    if p.is_dir() {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        for f in ["metrics.csv", "metrics_raw.csv"] {
            let c = p.join(f);
            if c.is_file() {
                return Ok((name, c));
            }
        }
        return Err(invalid(format!("{}: no metrics.csv inside", p.display())));
    }
    if !p.is_file() {
        return Err(invalid(format!("no such file: {}", p.display())));
    }
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match p.parent().and_then(Path::file_name) {
        Some(d) => format!("{}/{stem}", d.to_string_lossy()),
        None => stem,
    };
    Ok((name, p.to_path_buf()))
}

pub fn merge(inputs: &[PathBuf]) -> Result<Vec<RunRow>> {
    if inputs.is_empty() {
        return Err(invalid("report needs at least one input"));
    }
    inputs
        .iter()
        .map(|p| {
            let (name, file) = resolve_input(p)?;
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            summarize(name, &text).with_context(|| format!("parsing {}", file.display()))
        })
        .collect()
}

pub fn to_csv(rows: &[RunRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("run").chain(COLUMNS))?;
    for r in rows {
        let cells = r.values.iter().map(|v| v.as_deref().unwrap_or("n/a"));
        w.write_record(std::iter::once(r.run.as_str()).chain(cells))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
