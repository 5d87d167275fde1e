use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transformer::Architecture;

use super::stages::TargetResult;
use super::workspace::{read_json, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodTag {
    SearchedInt8,
    BaselineF32,
    BaselineInt8,
}

impl MethodTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::SearchedInt8 => "searched-int8",
            MethodTag::BaselineF32 => "baseline-f32",
            MethodTag::BaselineInt8 => "baseline-int8",
        }
    }
}

/// One model in the accuracy/latency/size tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: MethodTag,
    pub target_ms: f64,
    pub arch: Architecture,
    pub accuracy: f64,
    pub latency_ms: f64,
    /// Parameter storage: int8 linear weights at 1 byte, everything else 4.
    pub bytes: usize,
}

pub const REPORT_COLUMNS: [&str; 7] = ["method", "e", "h", "f", "accuracy", "latency_ms", "bytes"];

/// Paths written by [`write_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub accuracy_vs_latency: PathBuf,
    pub bytes_vs_latency: PathBuf,
    pub rows: Vec<ReportRow>,
}

/// Collects every `search/*/result.json` under `root`, ordered by target.
pub fn collect_results(root: &Path) -> Result<Vec<TargetResult>> {
    let dir = root.join("search");
    let entries = fs::read_dir(&dir).map_err(|_| Error::MissingArtifact {
        path: dir.clone(),
        what: "search results (run `speedlimit search` first)".into(),
    })?;
    let mut results = Vec::new();
    for entry in entries {
        let path = entry?.path().join("result.json");
        if path.exists() {
            results.push(read_json::<TargetResult>(&path, "search result")?);
        }
    }
    if results.is_empty() {
        return Err(Error::MissingArtifact {
            path: dir,
            what: "search results (run `speedlimit search` first)".into(),
        });
    }
    results.sort_by(|a, b| a.target_ms.total_cmp(&b.target_ms));
    Ok(results)
}

fn table(rows: &[&ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.method.as_str().to_string(),
            r.arch.e.to_string(),
            r.arch.h.to_string(),
            r.arch.f.to_string(),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.latency_ms),
            r.bytes.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Writes `accuracy_vs_latency.csv` (rows by method, then latency) and
/// `bytes_vs_latency.csv` (rows by method, then bytes) into `root/report`.
pub fn write_report(root: &Path) -> Result<ReportFiles> {
    let results = collect_results(root)?;
    let rows: Vec<ReportRow> = results.into_iter().flat_map(|r| r.rows).collect();
    let dir = root.join("report");
    fs::create_dir_all(&dir)?;

    let mut by_latency: Vec<&ReportRow> = rows.iter().collect();
    by_latency.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.latency_ms.total_cmp(&b.latency_ms))
            .then(a.target_ms.total_cmp(&b.target_ms))
    });
    let mut by_bytes: Vec<&ReportRow> = rows.iter().collect();
    by_bytes.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.bytes.cmp(&b.bytes))
            .then(a.target_ms.total_cmp(&b.target_ms))
    });
    let accuracy_vs_latency = dir.join("accuracy_vs_latency.csv");
    let bytes_vs_latency = dir.join("bytes_vs_latency.csv");
    write_atomic(&accuracy_vs_latency, &table(&by_latency)?)?;
    write_atomic(&bytes_vs_latency, &table(&by_bytes)?)?;
    Ok(ReportFiles {
        accuracy_vs_latency,
        bytes_vs_latency,
        rows,
    })
}
