//! Evaluation metrics rows and the report aggregation that turns them into
//! a policy-by-room summary grid.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("no metrics rows found under {0}")]
    Empty(String),
}

/// One evaluation result: cumulative throughput criteria for a
/// (scenario, room, policy, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub room: String,
    pub policy: String,
    pub seed: u64,
    /// Sum over evaluation episodes of the per-episode mean Q1, Mbps.
    pub cumulative_q1_mbps: f64,
    /// Sum over evaluation episodes of the per-episode mean rate, Mbps.
    pub cumulative_avg_mbps: f64,
    pub episodes: usize,
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<(), MetricsError> {
    let path = path.as_ref();
    let wrap = |source: csv::Error| MetricsError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    for row in rows {
        w.serialize(row).map_err(wrap)?;
    }
    w.flush().map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, MetricsError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|source| MetricsError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(|source| MetricsError::Csv {
            path: path.display().to_string(),
            source,
        })?);
    }
    Ok(rows)
}

/// Loads every `*.csv` under `dir` that parses as metrics rows. Files with
/// other schemas are skipped.
pub fn collect_metrics(dir: impl AsRef<Path>) -> Result<Vec<MetricsRow>, MetricsError> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|source| MetricsError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut rows = Vec::new();
    for p in paths {
        if let Ok(mut file_rows) = read_metrics_csv(&p) {
            rows.append(&mut file_rows);
        }
    }
    if rows.is_empty() {
        return Err(MetricsError::Empty(dir.display().to_string()));
    }
    Ok(rows)
}

/// The report grid: one row per (policy, criterion), one column per room,
/// each cell the median over seeds (blank when nothing ran there).
#[derive(Debug, Clone)]
pub struct Report {
    pub rooms: Vec<String>,
    /// (policy, criterion) -> room -> median value.
    pub cells: Vec<(String, String, Vec<Option<f64>>)>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregates metrics rows into the summary grid (median over seeds).
pub fn build_report(rows: &[MetricsRow]) -> Report {
    let mut rooms: Vec<String> = rows.iter().map(|r| r.room.clone()).collect();
    rooms.sort();
    rooms.dedup();
    let mut policies: Vec<String> = rows.iter().map(|r| r.policy.clone()).collect();
    policies.sort();
    policies.dedup();

    // (policy, criterion, room) -> seed values.
    let mut buckets: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        buckets
            .entry((r.policy.clone(), "q1".into(), r.room.clone()))
            .or_default()
            .push(r.cumulative_q1_mbps);
        buckets
            .entry((r.policy.clone(), "avg".into(), r.room.clone()))
            .or_default()
            .push(r.cumulative_avg_mbps);
    }

    let mut cells = Vec::new();
    for policy in &policies {
        for criterion in ["q1", "avg"] {
            let mut row = Vec::with_capacity(rooms.len());
            for room in &rooms {
                let value = buckets
                    .get_mut(&(policy.clone(), criterion.into(), room.clone()))
                    .map(|v| median(v));
                row.push(value);
            }
            cells.push((policy.clone(), criterion.to_string(), row));
        }
    }
    Report { rooms, cells }
}

impl Report {
    /// CSV form: policy,criterion,<room>... with blanks for missing cells.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("policy,criterion");
        for room in &self.rooms {
            out.push(',');
            out.push_str(room);
        }
        out.push('\n');
        for (policy, criterion, row) in &self.cells {
            out.push_str(policy);
            out.push(',');
            out.push_str(criterion);
            for cell in row {
                out.push(',');
                if let Some(v) = cell {
                    out.push_str(&format!("{v:.3}"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width text form for terminals.
    pub fn to_aligned_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:<9}", "policy", "criterion"));
        for room in &self.rooms {
            out.push_str(&format!(" {room:>12}"));
        }
        out.push('\n');
        for (policy, criterion, row) in &self.cells {
            out.push_str(&format!("{policy:<14} {criterion:<9}"));
            for cell in row {
                match cell {
                    Some(v) => out.push_str(&format!(" {v:>12.3}")),
                    None => out.push_str(&format!(" {:>12}", "")),
                }
            }
            out.push('\n');
        }
        out
    }
}
