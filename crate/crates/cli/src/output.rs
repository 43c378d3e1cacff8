//! Result files: `<experiment>-seed<seed>.csv` for the table and
//! `<experiment>-seed<seed>.json` for the full record.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::experiments::Outcome;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: &'static str,
    pub seed: u64,
    pub wall_time_seconds: f64,
}

/// Config echo, results and provenance of one run.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord<'a> {
    pub config: &'a ExperimentConfig,
    pub columns: &'a [&'static str],
    pub rows: &'a [Vec<f64>],
    pub summary: &'a Map<String, Value>,
    pub provenance: Provenance,
}

pub fn file_stem(config: &ExperimentConfig) -> String {
    format!("{}-seed{}", config.name(), config.seed)
}

pub fn to_csv(outcome: &Outcome) -> String {
    let mut s = outcome.columns.join(",");
    s.push('\n');
    for row in &outcome.rows {
        for (k, x) in row.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            write!(s, "{x}").expect("writing to a String");
        }
        s.push('\n');
    }
    s
}

/// Writes both files into `dir`, creating it if needed, and returns their paths.
pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    outcome: &Outcome,
    wall_time_seconds: f64,
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let stem = file_stem(config);
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, to_csv(outcome))?;

    let record = ResultRecord {
        config,
        columns: &outcome.columns,
        rows: &outcome.rows,
        summary: &outcome.summary,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            wall_time_seconds,
        },
    };
    let json_path = dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(&record).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(&json_path, text)?;
    Ok(vec![csv_path, json_path])
}
