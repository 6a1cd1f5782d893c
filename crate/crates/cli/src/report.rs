//! CSV rows and small summary helpers.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::CliResult;

/// One measurement point. Columns are written in field order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CsvRow {
    pub experiment: String,
    pub n: u64,
    pub gamma: u64,
    #[serde(rename = "B")]
    pub block_size: u64,
    pub op: String,
    pub mean_io: Option<f64>,
    pub p95_io: Option<f64>,
    pub node_count: Option<u64>,
    pub load: Option<f64>,
    pub max_level: Option<u8>,
    /// Milliseconds; left empty unless timing is requested.
    pub wall_time_ms: Option<f64>,
    pub metric: String,
    pub empirical: Option<f64>,
    pub bound: Option<f64>,
    pub stderr: Option<f64>,
}

pub fn write_csv<W: Write>(out: W, rows: &[CsvRow]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, rows: &[CsvRow]) -> CliResult<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

pub const HEADER: [&str; 15] = [
    "experiment",
    "n",
    "gamma",
    "B",
    "op",
    "mean_io",
    "p95_io",
    "node_count",
    "load",
    "max_level",
    "wall_time_ms",
    "metric",
    "empirical",
    "bound",
    "stderr",
];

pub fn mean(xs: &[u64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<u64>() as f64 / xs.len() as f64
}

/// Nearest-rank percentile.
pub fn percentile(xs: &[u64], pct: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let rank = ((pct / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1] as f64
}
