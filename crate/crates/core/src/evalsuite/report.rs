use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "dataset,model,metric,mean,std,runs,lr,batch";
/// Dataset label of the per-model cross-dataset mean rows.
pub const MEAN_ROW: &str = "__mean__";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (n−1); `None` for a single value.
    pub std: Option<f64>,
}

pub fn aggregate_runs(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::invalid("no runs to aggregate"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Ok(Aggregate { mean, std })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub metric: String,
    pub mean: f64,
    pub std: Option<f64>,
    pub runs: usize,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    /// Per-run values; not written to the CSV.
    pub accuracies: Vec<f64>,
}

impl ReportRow {
    pub fn from_runs(
        dataset: impl Into<String>,
        model: impl Into<String>,
        metric: impl Into<String>,
        accuracies: Vec<f64>,
        lr: f64,
        batch: usize,
    ) -> Result<Self> {
        let agg = aggregate_runs(&accuracies)?;
        Ok(ReportRow {
            dataset: dataset.into(),
            model: model.into(),
            metric: metric.into(),
            mean: agg.mean,
            std: agg.std,
            runs: accuracies.len(),
            lr: Some(lr),
            batch: Some(batch),
            accuracies,
        })
    }
}

fn as_printed(v: f64) -> f64 {
    format!("{v:.4}").parse().unwrap_or(v)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    /// One `__mean__` row per model evaluated on at least two datasets,
    /// averaging that model's dataset means as printed (4 decimals), so the
    /// row can be recomputed from the CSV alone. Models in order of first appearance.
    pub fn mean_rows(&self) -> Vec<ReportRow> {
        let mut order: Vec<&str> = Vec::new();
        let mut by_model: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
        for row in self.rows.iter().filter(|r| r.dataset != MEAN_ROW) {
            if !by_model.contains_key(row.model.as_str()) {
                order.push(&row.model);
            }
            by_model.entry(&row.model).or_default().push(row);
        }
        order
            .into_iter()
            .filter_map(|model| {
                let rows = &by_model[model];
                if rows.len() < 2 {
                    return None;
                }
                let metric = if rows.iter().all(|r| r.metric == rows[0].metric) {
                    rows[0].metric.clone()
                } else {
                    "mixed".to_string()
                };
                Some(ReportRow {
                    dataset: MEAN_ROW.into(),
                    model: model.into(),
                    metric,
                    mean: rows.iter().map(|r| as_printed(r.mean)).sum::<f64>() / rows.len() as f64,
                    std: None,
                    runs: rows.iter().map(|r| r.runs).min().unwrap_or(0),
                    lr: None,
                    batch: None,
                    accuracies: Vec::new(),
                })
            })
            .collect()
    }

    /// Mean rows are always recomputed; stored ones are not written twice.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in self.rows.iter().filter(|r| r.dataset != MEAN_ROW).chain(&self.mean_rows()) {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{},{},{},{}",
                r.dataset,
                r.model,
                r.metric,
                r.mean,
                opt(r.std.map(|s| format!("{s:.4}"))),
                r.runs,
                opt(r.lr.map(|v| v.to_string())),
                opt(r.batch.map(|v| v.to_string())),
            );
        }
        out
    }

    /// Parse a report CSV, `__mean__` rows included.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, detail: &str| Error::Format {
            format: "report",
            detail: format!("line {line}: {detail}"),
        };
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(bad(1, "missing header"));
        }
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let n = i + 2;
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 8 {
                    return Err(bad(n, "expected 8 fields"));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
                let opt_num = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
                Ok(ReportRow {
                    dataset: f[0].into(),
                    model: f[1].into(),
                    metric: f[2].into(),
                    mean: num(f[3])?,
                    std: opt_num(f[4])?,
                    runs: f[5].parse().map_err(|_| bad(n, "bad run count"))?,
                    lr: opt_num(f[6])?,
                    batch: if f[7].is_empty() {
                        None
                    } else {
                        Some(f[7].parse().map_err(|_| bad(n, "bad batch"))?)
                    },
                    accuracies: Vec::new(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunReport { rows })
    }
}

pub fn write_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    for r in &report.rows {
        if [&r.dataset, &r.model, &r.metric].iter().any(|s| s.contains([',', '\n'])) {
            return Err(Error::Validation(format!("report field of `{}`/`{}` contains a comma or newline", r.dataset, r.model)));
        }
    }
    fs::write(path, report.to_csv())?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    RunReport::from_csv(&fs::read_to_string(path)?)
}
