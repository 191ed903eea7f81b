//! CSV output of a run.
//!
//! One row per round, then a summary row with `round = -1` whose counts are
//! totals over all rounds, whose accuracy is the final round's, and which is
//! the only row with a value in the trailing `aer` column. IID runs report
//! `alpha = inf`. Rows are flushed as they are written.

use std::fs::File;
use std::path::{Path, PathBuf};

use super::{AggregatorKind, ExperimentReport, RoundRecord};
use crate::attacks::AttackKind;
use crate::error::{Error, Result};

/// Column names, in order.
pub fn csv_header() -> Vec<String> {
    let mut cols: Vec<String> = [
        "round",
        "aggregator",
        "byz_fraction",
        "alpha",
        "accuracy",
        "n_b",
        "n_m",
        "selected_count",
    ]
    .map(String::from)
    .to_vec();
    cols.extend(AttackKind::ALL.iter().map(|k| format!("mistaken_{k}")));
    cols.push("aer".into());
    cols
}

pub struct CsvReport {
    path: PathBuf,
    writer: csv::Writer<File>,
    aggregator: AggregatorKind,
    byz_fraction: f64,
    alpha: f64,
}

impl CsvReport {
    pub fn create(path: &Path, aggregator: AggregatorKind, byz_fraction: f64, alpha: f64) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut report = Self {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(file),
            aggregator,
            byz_fraction,
            alpha,
        };
        report.write(csv_header())?;
        Ok(report)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write(&mut self, row: Vec<String>) -> Result<()> {
        let wrap = |e: csv::Error| Error::format(&self.path, e.to_string());
        self.writer.write_record(&row).map_err(wrap)?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn row(&self, round: i64, accuracy: f64, n_b: usize, n_m: usize, selected: usize, mistaken: &[usize; 7]) -> Vec<String> {
        let mut row = vec![
            round.to_string(),
            self.aggregator.to_string(),
            self.byz_fraction.to_string(),
            self.alpha.to_string(),
            accuracy.to_string(),
            n_b.to_string(),
            n_m.to_string(),
            selected.to_string(),
        ];
        row.extend(AttackKind::ALL.iter().map(|k| mistaken[k.index()].to_string()));
        row
    }

    pub fn write_round(&mut self, r: &RoundRecord) -> Result<()> {
        let mut row = self.row(r.round as i64, r.accuracy, r.n_b, r.n_m, r.selected.len(), &r.mistaken);
        row.push(String::new());
        self.write(row)
    }

    pub fn write_summary(&mut self, report: &ExperimentReport) -> Result<()> {
        let n_b = report.records.iter().map(|r| r.n_b).sum();
        let n_m = report.records.iter().map(|r| r.n_m).sum();
        let selected = report.records.iter().map(|r| r.selected.len()).sum();
        let mut row = self.row(-1, report.final_accuracy, n_b, n_m, selected, &report.mistaken_totals);
        row.push(report.aer.to_string());
        self.write(row)
    }
}
