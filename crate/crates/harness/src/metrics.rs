//! CSV metric records and the summary report.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// One evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task: String,
    pub method: String,
    pub seed: u64,
    pub exact_match: f64,
    pub mean_context_tokens: f64,
    pub wall_time_s: f64,
}

/// One point of the context-scaling sweep; accuracy is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub size: usize,
    pub method: String,
    pub context_tokens: f64,
    pub accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str = "task,method,seed,exact_match,mean_context_tokens,wall_time_s";
pub const SCALING_HEADER: &str = "size,method,context_tokens,accuracy";

fn write_rows<T: Serialize>(w: impl Write, header: &str, rows: &[T]) -> Result<(), HarnessError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header.split(','))?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_metrics(w: impl Write, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    write_rows(w, METRICS_HEADER, rows)
}

pub fn write_scaling(w: impl Write, rows: &[ScalingRow]) -> Result<(), HarnessError> {
    write_rows(w, SCALING_HEADER, rows)
}

/// Read a metrics CSV. An empty input, with or without the header, gives
/// no rows.
pub fn read_metrics(r: impl Read) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    Ok(rdr.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per (task, method) aggregate over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub task: String,
    pub method: String,
    pub runs: usize,
    pub exact_match: (f64, f64),
    pub context_tokens: f64,
    pub wall_time_s: f64,
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<Summary> {
    let mut groups: BTreeMap<(&str, &str), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((&r.task, &r.method)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((task, method), rs)| {
            let em: Vec<f64> = rs.iter().map(|r| r.exact_match).collect();
            Summary {
                task: task.into(),
                method: method.into(),
                runs: rs.len(),
                exact_match: mean_sd(&em),
                context_tokens: rs.iter().map(|r| r.mean_context_tokens).sum::<f64>() / rs.len() as f64,
                wall_time_s: rs.iter().map(|r| r.wall_time_s).sum(),
            }
        })
        .collect()
}

/// Markdown table of [`summarize`]; header and rule only for no rows.
pub fn markdown_report(rows: &[MetricsRow]) -> String {
    let mut out = String::from("| task | method | runs | exact match (mean ± s.d.) | context tokens | wall time (s) |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for s in summarize(rows) {
        out.push_str(&format!(
            "| {} | {} | {} | {:.4} ± {:.4} | {:.1} | {:.1} |\n",
            s.task, s.method, s.runs, s.exact_match.0, s.exact_match.1, s.context_tokens, s.wall_time_s
        ));
    }
    out
}

/// CSV form of [`summarize`].
pub fn csv_report(rows: &[MetricsRow]) -> String {
    let mut out = String::from("task,method,runs,exact_match_mean,exact_match_sd,mean_context_tokens,wall_time_s\n");
    for s in summarize(rows) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.task, s.method, s.runs, s.exact_match.0, s.exact_match.1, s.context_tokens, s.wall_time_s
        ));
    }
    out
}
