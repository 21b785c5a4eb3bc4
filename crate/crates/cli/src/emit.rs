//! Result files: JSON Lines, the CSV summary and plot traces.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::OutputFormat;
use crate::runner::ResultRecord;
use crate::CliError;

pub const SUMMARY_HEADER: &str = "experiment,p,q,theta,K,T,N,N_mc,ratio,stderr";
pub const TRACE_HEADER: &str = "experiment,trace,x,ratio,stderr";

pub const JSONL_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "traces.csv";

fn csv_bytes<T: serde::Serialize>(header: &str, rows: impl Iterator<Item = T>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(format!("csv buffer: {e}")))
}

/// The summary CSV for a set of records.
pub fn summary_csv(records: &[ResultRecord]) -> Result<Vec<u8>, CliError> {
    csv_bytes(SUMMARY_HEADER, records.iter().flat_map(|r| r.rows.iter()))
}

pub fn trace_csv(records: &[ResultRecord]) -> Result<Vec<u8>, CliError> {
    csv_bytes(TRACE_HEADER, records.iter().flat_map(|r| r.traces.iter()))
}

pub fn jsonl(records: &[ResultRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<ResultRecord>, CliError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Runtime(format!("jsonl: {e}"))))
        .collect()
}

/// Writes the requested files into `dir` and returns their paths.
pub fn emit(records: &[ResultRecord], dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(format, OutputFormat::Jsonl | OutputFormat::Both) {
        let p = dir.join(JSONL_FILE);
        fs::write(&p, jsonl(records))?;
        written.push(p);
    }
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        let p = dir.join(SUMMARY_FILE);
        fs::write(&p, summary_csv(records)?)?;
        written.push(p);
        let p = dir.join(TRACE_FILE);
        fs::write(&p, trace_csv(records)?)?;
        written.push(p);
    }
    Ok(written)
}
