use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::run::RunOutcome;
use super::summary::SummaryRow;
use crate::metrics::{format_us, MetricKind, MetricRecord};

#[derive(Serialize)]
struct MetricRow<'a> {
    kind: &'a str,
    blockchain_size: u32,
    tx_count: u32,
    node: u32,
    sim_time: u64,
    elapsed_us: String,
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Raw metric records: `kind,blockchain_size,tx_count,node,sim_time,elapsed_us`.
pub fn write_metrics_csv(path: &Path, blockchain_size: u32, tx_count: u32, records: &[MetricRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if records.is_empty() {
        w.write_record(["kind", "blockchain_size", "tx_count", "node", "sim_time", "elapsed_us"])
            .map_err(csv_err)?;
    }
    for r in records {
        w.serialize(MetricRow {
            kind: r.kind.as_str(),
            blockchain_size,
            tx_count,
            node: r.node,
            sim_time: r.sim_time,
            elapsed_us: format_us(r.elapsed_ns),
        })
        .map_err(csv_err)?;
    }
    w.flush()
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "kind",
    "blockchain_size",
    "tx_count",
    "samples",
    "mean_us",
    "ci95_low_us",
    "ci95_high_us",
    "min_us",
    "max_us",
    "growth_vs_size",
    "growth_vs_tx",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

fn ratio(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_summary_csv<'a>(path: &Path, rows: impl IntoIterator<Item = &'a SummaryRow>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.kind.as_str().to_string(),
            r.blockchain_size.to_string(),
            r.tx_count.to_string(),
            r.samples.to_string(),
            opt(r.mean_us),
            opt(r.ci95_low_us),
            opt(r.ci95_high_us),
            opt(r.min_us),
            opt(r.max_us),
            ratio(r.growth_vs_size),
            ratio(r.growth_vs_tx),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// `metrics.csv`, `summary.csv` and `report.json` for one run.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let s = &outcome.scenario;
    if s.raw_metrics {
        write_metrics_csv(&dir.join("metrics.csv"), s.blockchain_size, s.tx_per_vehicle, &outcome.records)?;
    }
    write_summary_csv(&dir.join("summary.csv"), &outcome.summary.rows)?;
    write_json(&dir.join("report.json"), outcome)
}

pub fn grid_csv_name(kind: MetricKind) -> String {
    format!("grid_{}.csv", kind.as_str())
}
