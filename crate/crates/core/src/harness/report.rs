use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Method, Task};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub const SCHEMA_VERSION: &str = "1";

/// Scalar columns shared by records and aggregates, in CSV order.
/// `e3`/`e4` are summarized as the mean absolute pairwise correlation.
pub const METRIC_COLUMNS: [&str; 10] = ["e1", "e2", "e3", "e4", "e5", "e6", "e7", "e8", "clustering_accuracy", "wall_time_s"];

pub const CSV_HEADER: [&str; 19] = [
    "method",
    "task",
    "sweep_value",
    "repetition",
    "kind",
    "status",
    "count",
    "lambda1",
    "lambda2",
    "e1",
    "e2",
    "e3",
    "e4",
    "e5",
    "e6",
    "e7",
    "e8",
    "clustering_accuracy",
    "wall_time_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub method: Method,
    pub task: Task,
    pub sweep_value: f64,
    pub repetition: usize,
    pub status: Status,
    pub error: Option<String>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub wall_time_s: f64,
    pub metrics: MetricReport,
}

impl Record {
    /// Values for [`METRIC_COLUMNS`].
    pub fn scalars(&self) -> [Option<f64>; 10] {
        let m = &self.metrics;
        let mean_abs = |v: &Option<Vec<f64>>| {
            v.as_ref().filter(|v| !v.is_empty()).map(|v| v.iter().map(|r| r.abs()).sum::<f64>() / v.len() as f64)
        };
        [
            m.e1,
            m.e2,
            mean_abs(&m.e3),
            mean_abs(&m.e4),
            m.e5,
            m.e6,
            m.e7.map(|v| v as f64),
            m.e8.map(|v| v as f64),
            m.clustering_accuracy,
            Some(self.wall_time_s),
        ]
    }
}

/// Mean and standard error over the successful records of one
/// `(method, sweep_value)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub task: Task,
    pub sweep_value: f64,
    pub count: usize,
    pub failed: usize,
    pub mean: BTreeMap<String, f64>,
    pub stderr: BTreeMap<String, f64>,
}

impl Aggregate {
    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        self.mean.get(metric).copied()
    }

    pub fn stderr_of(&self, metric: &str) -> Option<f64> {
        self.stderr.get(metric).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: String,
    pub task: Task,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
}

/// Sample mean and `sd / √n` (zero for a single value).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ExperimentReport {
    pub fn new(task: Task, records: Vec<Record>) -> Self {
        let aggregates = aggregate(task, &records);
        Self { schema_version: SCHEMA_VERSION.to_string(), task, records, aggregates }
    }

    pub fn aggregate_for(&self, method: Method, sweep_value: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.sweep_value == sweep_value)
    }

    pub fn records_for(&self, method: Method, sweep_value: f64) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.method == method && r.sweep_value == sweep_value)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported report schema '{}'", report.schema_version)));
        }
        Ok(report)
    }
}

fn aggregate(task: Task, records: &[Record]) -> Vec<Aggregate> {
    let mut groups: Vec<((Method, f64), Vec<&Record>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(key, _)| key.0 == r.method && key.1 == r.sweep_value) {
            Some((_, members)) => members.push(r),
            None => groups.push(((r.method, r.sweep_value), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((method, sweep_value), members)| {
            let ok: Vec<&&Record> = members.iter().filter(|r| r.status == Status::Ok).collect();
            let mut mean = BTreeMap::new();
            let mut stderr = BTreeMap::new();
            for (c, name) in METRIC_COLUMNS.iter().enumerate() {
                let values: Vec<f64> = ok.iter().filter_map(|r| r.scalars()[c]).collect();
                if !values.is_empty() {
                    let (m, s) = mean_and_stderr(&values);
                    mean.insert(name.to_string(), m);
                    stderr.insert(name.to_string(), s);
                }
            }
            Aggregate { method, task, sweep_value, count: ok.len(), failed: members.len() - ok.len(), mean, stderr }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid(format!("unknown report format '{other}'"))),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// CSV with [`CSV_HEADER`]: one `record` row per cell, then `mean` and
/// `stderr` rows per group.
pub fn write_report_csv(report: &ExperimentReport, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in &report.records {
        let mut row = vec![
            r.method.name().to_string(),
            r.task.name().to_string(),
            format!("{}", r.sweep_value),
            r.repetition.to_string(),
            "record".into(),
            match r.status {
                Status::Ok => "ok".into(),
                Status::Failed => "failed".into(),
            },
            "1".into(),
            cell(r.lambda1),
            cell(r.lambda2),
        ];
        row.extend(r.scalars().iter().map(|v| cell(*v)));
        w.write_record(&row).map_err(io)?;
    }
    for a in &report.aggregates {
        for (kind, values) in [("mean", &a.mean), ("stderr", &a.stderr)] {
            let mut row = vec![
                a.method.name().to_string(),
                a.task.name().to_string(),
                format!("{}", a.sweep_value),
                String::new(),
                kind.into(),
                if a.count > 0 { "ok".into() } else { "failed".into() },
                a.count.to_string(),
                String::new(),
                String::new(),
            ];
            row.extend(METRIC_COLUMNS.iter().map(|c| cell(values.get(*c).copied())));
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_report(report: &ExperimentReport, path: &Path, format: ReportFormat) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        ReportFormat::Csv => write_report_csv(report, file),
        ReportFormat::Json => {
            serde_json::to_writer_pretty(file, report)?;
            Ok(())
        }
    }
}
