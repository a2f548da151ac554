use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossBreakdown;

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    /// 1-based, counted across phases.
    pub epoch: usize,
    /// `joint`, `source` or `target`.
    pub phase: &'static str,
    pub source_batches: usize,
    pub target_batches: usize,
    /// Mean over the epoch's batches; zeros when there were none.
    pub loss: LossBreakdown,
    pub val_ce: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub inv_temperature: f64,
    /// Largest deviation of a concentration mean from `τ′` this epoch.
    pub concentration_error: f64,
    /// Wall time; kept out of the CSV so it stays reproducible.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub rows: Vec<EpochMetrics>,
    /// Epoch number of the selected checkpoint.
    pub best_epoch: Option<usize>,
}

const LEAD: [&str; 4] = ["epoch", "phase", "source_batches", "target_batches"];
const TAIL: [&str; 5] = ["val_ce", "val_acc", "test_acc", "inv_temperature", "concentration_error"];

impl RunMetrics {
    pub fn header() -> String {
        LEAD.iter()
            .chain(LossBreakdown::FIELDS.iter())
            .chain(TAIL.iter())
            .copied()
            .collect::<Vec<_>>()
            .join(",")
    }

    /// One row per epoch, columns as in [`RunMetrics::header`]. Floats use
    /// their shortest exact decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = Self::header();
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.epoch, r.phase, r.source_batches, r.target_batches).unwrap();
            let tail = [r.val_ce, r.val_acc, r.test_acc, r.inv_temperature, r.concentration_error];
            for v in r.loss.values().iter().chain(&tail) {
                write!(out, ",{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for r in &self.rows {
            writeln!(out, "{},{}", r.epoch, r.seconds).unwrap();
        }
        out
    }

    pub fn write(&self, metrics: &Path, timings: Option<&Path>) -> Result<()> {
        fs::write(metrics, self.to_csv()).map_err(|e| Error::io(metrics, e))?;
        if let Some(t) = timings {
            fs::write(t, self.timings_csv()).map_err(|e| Error::io(t, e))?;
        }
        Ok(())
    }

    pub fn best(&self) -> Option<&EpochMetrics> {
        let e = self.best_epoch?;
        self.rows.iter().find(|r| r.epoch == e)
    }
}

/// A metrics CSV read back for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let columns: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty metrics file".into()))?
            .split(',')
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let row: Vec<String> = l.split(',').map(str::to_owned).collect();
            if row.len() != columns.len() {
                return Err(Error::InvalidArgument(format!(
                    "metrics row {} has {} fields, header has {}",
                    i + 2,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        self.rows.iter().map(|r| r[j].parse().ok()).collect()
    }
}
