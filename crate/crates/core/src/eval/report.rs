//! Metric rows and their aggregation over repeats.

use std::io::Write;

use crate::error::{Error, Result};

/// One method scored on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub dataset: String,
    pub regime: String,
    pub repeat: usize,
    pub recall: f64,
    pub pe_ratio: f64,
    /// Blocking wall time; `None` when the candidates were read from disk.
    pub wall_time_s: Option<f64>,
}

/// Aggregate of one method on one dataset/regime over its repeats.
/// Variances are population variances.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub dataset: String,
    pub regime: String,
    pub runs: usize,
    pub recall_mean: f64,
    pub recall_min: f64,
    pub recall_max: f64,
    pub recall_var: f64,
    pub pe_mean: f64,
    pub pe_min: f64,
    pub pe_max: f64,
    pub pe_var: f64,
}

fn stats(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean.clamp(min, max), min, max, var)
}

/// Groups rows by (method, dataset, regime) in first-appearance order.
pub fn report(rows: &[MetricRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no metric rows to report".into()));
    }
    let mut keys: Vec<(&str, &str, &str)> = Vec::new();
    for r in rows {
        let k = (r.method.as_str(), r.dataset.as_str(), r.regime.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    Ok(keys
        .into_iter()
        .map(|(method, dataset, regime)| {
            let group: Vec<&MetricRow> = rows
                .iter()
                .filter(|r| r.method == method && r.dataset == dataset && r.regime == regime)
                .collect();
            let recalls: Vec<f64> = group.iter().map(|r| r.recall).collect();
            let pes: Vec<f64> = group.iter().map(|r| r.pe_ratio).collect();
            let (recall_mean, recall_min, recall_max, recall_var) = stats(&recalls);
            let (pe_mean, pe_min, pe_max, pe_var) = stats(&pes);
            SummaryRow {
                method: method.to_owned(),
                dataset: dataset.to_owned(),
                regime: regime.to_owned(),
                runs: group.len(),
                recall_mean,
                recall_min,
                recall_max,
                recall_var,
                pe_mean,
                pe_min,
                pe_max,
                pe_var,
            }
        })
        .collect())
}

pub fn write_metrics_csv<W: Write>(writer: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "dataset",
        "regime",
        "repeat",
        "recall",
        "pe_ratio",
        "wall_time_s",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.dataset.clone(),
            r.regime.clone(),
            r.repeat.to_string(),
            r.recall.to_string(),
            r.pe_ratio.to_string(),
            r.wall_time_s.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "dataset",
        "regime",
        "runs",
        "recall_mean",
        "recall_min",
        "recall_max",
        "recall_var",
        "pe_mean",
        "pe_min",
        "pe_max",
        "pe_var",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.dataset.clone(),
            r.regime.clone(),
            r.runs.to_string(),
            r.recall_mean.to_string(),
            r.recall_min.to_string(),
            r.recall_max.to_string(),
            r.recall_var.to_string(),
            r.pe_mean.to_string(),
            r.pe_min.to_string(),
            r.pe_max.to_string(),
            r.pe_var.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Column-aligned table for terminals.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let header = [
        "method",
        "dataset",
        "regime",
        "runs",
        "recall",
        "recall range",
        "P/E",
        "P/E range",
    ];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.dataset.clone(),
                r.regime.clone(),
                r.runs.to_string(),
                format!("{:.4}", r.recall_mean),
                format!("{:.4}..{:.4}", r.recall_min, r.recall_max),
                format!("{:.3}", r.pe_mean),
                format!("{:.3}..{:.3}", r.pe_min, r.pe_max),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_owned()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
