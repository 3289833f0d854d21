//! Per-step metrics as JSON lines with a CSV mirror.
//!
//! Every JSONL record starts with `format_version`; the CSV carries the
//! same columns in the same order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::StepReport;

pub const METRICS_FORMAT_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 11] = [
    "format_version",
    "step",
    "pass_at_1",
    "buffer_size",
    "retired_size",
    "mean_entropy",
    "objective_value",
    "n_experiential",
    "gate_active",
    "suite_pass_at_1",
    "with_replacement",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub format_version: u32,
    #[serde(flatten)]
    pub report: StepReport,
}

pub fn jsonl_line(report: &StepReport) -> String {
    let record = MetricsRecord {
        format_version: METRICS_FORMAT_VERSION,
        report: report.clone(),
    };
    serde_json::to_string(&record).expect("metrics record serializes")
}

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

pub fn csv_row(r: &StepReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        METRICS_FORMAT_VERSION,
        r.step,
        r.pass_at_1,
        r.buffer_size,
        r.retired_size,
        r.mean_entropy,
        r.objective_value,
        r.n_experiential,
        r.gate_active,
        r.suite_pass_at_1,
        r.with_replacement
    )
}

/// Parses a metrics JSONL file, rejecting unknown format versions.
pub fn read_jsonl(text: &str) -> Result<Vec<StepReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let record: MetricsRecord = serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if record.format_version != METRICS_FORMAT_VERSION {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("unsupported format_version {}", record.format_version),
                });
            }
            Ok(record.report)
        })
        .collect()
}

/// Streams reports to a `.jsonl` file and its `.csv` mirror.
pub struct MetricsWriter {
    jsonl: BufWriter<File>,
    csv: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(jsonl_path: &Path, csv_path: &Path) -> Result<Self> {
        let jsonl = BufWriter::new(File::create(jsonl_path)?);
        let mut csv = BufWriter::new(File::create(csv_path)?);
        writeln!(csv, "{}", csv_header())?;
        Ok(Self { jsonl, csv })
    }

    pub fn write(&mut self, report: &StepReport) -> Result<()> {
        writeln!(self.jsonl, "{}", jsonl_line(report))?;
        writeln!(self.csv, "{}", csv_row(report))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.jsonl.flush()?;
        self.csv.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(step: u64) -> StepReport {
        StepReport {
            step,
            pass_at_1: 0.125,
            buffer_size: 3,
            retired_size: 1,
            mean_entropy: 1.0 / 3.0,
            objective_value: -0.25,
            n_experiential: 2,
            gate_active: true,
            suite_pass_at_1: 0.1,
            with_replacement: false,
        }
    }

    #[test]
    fn jsonl_leads_with_version_and_round_trips() {
        let line = jsonl_line(&report(4));
        assert!(line.starts_with("{\"format_version\":1,\"step\":4,"));
        let back = read_jsonl(&format!("{line}\n{}\n", jsonl_line(&report(5)))).unwrap();
        assert_eq!(back, vec![report(4), report(5)]);
        let bumped = line.replace("\"format_version\":1", "\"format_version\":2");
        assert!(read_jsonl(&bumped).is_err());
    }

    #[test]
    fn csv_columns_match_json_fields() {
        let v: serde_json::Value = serde_json::from_str(&jsonl_line(&report(1))).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut cols = CSV_COLUMNS.to_vec();
        keys.sort();
        cols.sort();
        assert_eq!(keys, cols);
        assert_eq!(csv_row(&report(1)).split(',').count(), CSV_COLUMNS.len());
    }
}
