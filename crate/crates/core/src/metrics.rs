//! Per-epoch run records, CSV emission and last-5 summaries.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "epoch",
    "iteration",
    "train_loss",
    "main_loss",
    "phantom_loss",
    "test_loss",
    "test_acc",
    "lr",
    "alpha_mean",
    "wall_seconds",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    pub iteration: u64,
    pub train_loss: f64,
    pub main_loss: Option<f64>,
    pub phantom_loss: Option<f64>,
    pub test_loss: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub alpha_mean: Option<f64>,
    pub wall_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_acc: f64,
    pub mean5_acc: f64,
    pub max5_acc: f64,
    pub final_test_loss: f64,
    pub final_train_loss: f64,
    pub epochs: usize,
    pub iterations: u64,
}

impl Summary {
    /// Final accuracy plus mean and max over the last five records.
    pub fn from_records(records: &[RunRecord]) -> Option<Summary> {
        let last = records.last()?;
        let tail = &records[records.len().saturating_sub(5)..];
        let mean5 = tail.iter().map(|r| r.test_acc).sum::<f64>() / tail.len() as f64;
        let max5 = tail.iter().map(|r| r.test_acc).fold(f64::NEG_INFINITY, f64::max);
        Some(Summary {
            final_acc: last.test_acc,
            mean5_acc: mean5,
            max5_acc: max5,
            final_test_loss: last.test_loss,
            final_train_loss: last.train_loss,
            epochs: last.epoch,
            iterations: last.iteration,
        })
    }
}

pub fn write_metrics_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    for (i, expected) in CSV_HEADER.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == *expected => {}
            found => {
                return Err(Error::Config(format!(
                    "{}: column {i} should be `{expected}`, found `{}`",
                    path.display(),
                    found.unwrap_or("<missing>")
                )))
            }
        }
    }
    if headers.len() != CSV_HEADER.len() {
        return Err(Error::Config(format!(
            "{}: unexpected column `{}`",
            path.display(),
            headers.get(CSV_HEADER.len()).unwrap_or("")
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_summary_json(summary: &Summary, extra: serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut value = serde_json::to_value(summary)?;
    if let (Some(obj), serde_json::Value::Object(extra)) = (value.as_object_mut(), extra) {
        obj.extend(extra);
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, &value)?;
    writeln!(file).map_err(|e| Error::io(path, e))
}
