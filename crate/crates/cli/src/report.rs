//! CSV and JSON emission. Every CSV row starts with the config hash.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Usage(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
pub struct TraceRow<'a> {
    pub config_hash: &'a str,
    pub trainer: &'a str,
    pub seed: u64,
    pub outer_step: usize,
    pub mean_inner_loss: f64,
    pub mean_outer_loss: f64,
}

#[derive(Serialize)]
pub struct HdcTraceRow<'a> {
    pub config_hash: &'a str,
    pub seed: u64,
    pub epoch: usize,
    pub train_accuracy: f64,
}

#[derive(Serialize)]
pub struct ResultCsvRow<'a> {
    pub config_hash: &'a str,
    pub method: &'a str,
    pub task_index: usize,
    pub task: &'a str,
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub accuracy: f64,
}

/// Wall times live apart from results so result files stay reproducible.
#[derive(Serialize)]
pub struct TimingRow<'a> {
    pub config_hash: &'a str,
    pub method: &'a str,
    pub task_index: usize,
    pub seed: u64,
    pub adapt_time_secs: f64,
}

#[derive(Serialize)]
pub struct SummaryRow<'a> {
    pub config_hash: &'a str,
    pub method: &'a str,
    pub task_index: usize,
    pub task: &'a str,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub runs: usize,
}

#[derive(Serialize)]
pub struct AblationRow<'a> {
    pub config_hash: &'a str,
    pub sweep: &'a str,
    pub value: usize,
    pub method: &'a str,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Serialize)]
pub struct RobustnessRow<'a> {
    pub config_hash: &'a str,
    pub model_variant: &'a str,
    pub seed: u64,
    pub p: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub trials: usize,
}
