//! Evaluation metrics and the sweep CSV contract.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation result. `param` is the sweep grid value (0 outside
/// sweeps); `per_class` is indexed by class id.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRow {
    pub scenario: String,
    pub transform: String,
    pub param: f64,
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub latency_ms: f64,
    pub seed: u64,
}

/// A metrics row plus the per-sample (label, prediction) pairs it was
/// computed from, so the accuracy arithmetic can be recounted.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub row: MetricsRow,
    pub predictions: Vec<(usize, usize)>,
}

impl EvalOutcome {
    /// Independent recount of `accuracy` from the stored predictions.
    pub fn recount_accuracy(&self) -> f64 {
        let correct = self
            .predictions
            .iter()
            .filter(|(label, pred)| label == pred)
            .count();
        correct as f64 / self.predictions.len().max(1) as f64
    }
}

pub const CSV_HEADER: &str = "scenario,transform,param,accuracy,per_class_json,latency_ms,seed";

/// Writes rows under the documented schema. Callers sort by grid value
/// before writing; this function never appends.
pub fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| {
        Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::Other, e),
        )
    })?;
    let io_err = |e: csv::Error| {
        Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::Other, e),
        )
    };
    w.write_record(CSV_HEADER.split(',')).map_err(io_err)?;
    for r in rows {
        let per_class = serde_json::to_string(&r.per_class)?;
        w.write_record([
            r.scenario.as_str(),
            r.transform.as_str(),
            &r.param.to_string(),
            &r.accuracy.to_string(),
            &per_class,
            &r.latency_ms.to_string(),
            &r.seed.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads rows back from the schema written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::Other, e),
        )
    })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            Error::io(
                path.display().to_string(),
                std::io::Error::new(std::io::ErrorKind::Other, e),
            )
        })?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::Validation(format!("csv row too short: {record:?}")))
        };
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Validation(format!("bad csv number {s:?}")))
        };
        rows.push(MetricsRow {
            scenario: field(0)?.to_string(),
            transform: field(1)?.to_string(),
            param: parse_f(field(2)?)?,
            accuracy: parse_f(field(3)?)?,
            per_class: serde_json::from_str(field(4)?)?,
            latency_ms: parse_f(field(5)?)?,
            seed: field(6)?
                .parse()
                .map_err(|_| Error::Validation("bad csv seed".into()))?,
        });
    }
    Ok(rows)
}
