//! CSV and JSON renderings of an [`EvaluationReport`].

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{ClassEvaluation, EvaluationReport, Metrics};
use crate::error::{Error, Result};
use crate::npy::{write_atomic, write_bytes_atomic};

pub const CONFUSION_CSV: &str = "confusion_matrix.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const AUC_CSV: &str = "auc.csv";
pub const ESTIMATED_F1_CSV: &str = "estimated_f1.csv";
pub const SCATTER_CSV: &str = "scatter.csv";
pub const CURVES_DIR: &str = "curves";

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        for row in rows {
            w.serialize(row).map_err(|e| Error::format(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    })
}

#[derive(Debug, Serialize)]
struct MetricsRow<'a> {
    scope: &'a str,
    class: &'a str,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: f64,
    support: Option<u64>,
}

fn metrics_rows<'a>(scope: &'a str, m: &'a Metrics, out: &mut Vec<MetricsRow<'a>>) {
    for c in &m.per_class {
        out.push(MetricsRow {
            scope,
            class: &c.name,
            precision: Some(c.precision),
            recall: Some(c.recall),
            f1: c.f1,
            support: Some(c.support),
        });
    }
    for (label, avg) in [("MEAN", m.mean), ("WEIGHTED MEAN", m.weighted_mean)] {
        out.push(MetricsRow {
            scope,
            class: label,
            precision: Some(avg.precision),
            recall: Some(avg.recall),
            f1: avg.f1,
            support: Some(m.support),
        });
    }
    out.push(MetricsRow {
        scope,
        class: "ACCURACY",
        precision: None,
        recall: None,
        f1: m.accuracy,
        support: None,
    });
}

#[derive(Debug, Serialize)]
struct AucRow<'a> {
    class: &'a str,
    area_reference: Option<f64>,
    area_refined: Option<f64>,
    difference: Option<f64>,
    agreement: u64,
    f1: f64,
}

#[derive(Debug, Serialize)]
struct EstimateRow<'a> {
    class: &'a str,
    threshold: Option<f64>,
    fraction_below: Option<f64>,
    in_band: Option<bool>,
    precision_reference: Option<f64>,
    recall_reference: Option<f64>,
    f1_reference: Option<f64>,
    precision_refined: Option<f64>,
    recall_refined: Option<f64>,
    f1_refined: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ScatterRow<'a> {
    subset: &'a str,
    refined_better: u64,
    reference_better: u64,
    ties: u64,
    refined_mean_margin: f64,
    reference_mean_margin: f64,
}

#[derive(Debug, Serialize)]
struct CurveFile<'a> {
    code: u8,
    class: &'a str,
    e_max: f64,
    points: &'a [super::CurvePoint],
}

pub fn curve_file_name(c: &ClassEvaluation) -> String {
    let slug: String = c
        .name
        .chars()
        .map(|ch| {
            if ch.is_ascii_alphanumeric() {
                ch.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("{:02}_{slug}.json", c.code)
}

/// Writes every table and per-class curve into `dir`; returns the paths.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join(CURVES_DIR)).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join(CONFUSION_CSV);
    report.confusion_matrix()?.write_csv(&path)?;
    written.push(path);

    let mut rows = Vec::new();
    metrics_rows("all", &report.metrics, &mut rows);
    if let Some(m) = &report.crop_metrics {
        metrics_rows("crops", m, &mut rows);
    }
    let path = dir.join(METRICS_CSV);
    write_rows(&path, &rows)?;
    written.push(path);

    let auc: Vec<AucRow> = report
        .classes
        .iter()
        .map(|c| AucRow {
            class: &c.name,
            area_reference: c.area_reference,
            area_refined: c.area_refined,
            difference: c.area_difference,
            agreement: c.agreement,
            f1: c.f1,
        })
        .collect();
    let path = dir.join(AUC_CSV);
    write_rows(&path, &auc)?;
    written.push(path);

    let estimates: Vec<EstimateRow> = report
        .classes
        .iter()
        .map(|c| EstimateRow {
            class: &c.name,
            threshold: c.threshold.map(|t| t.threshold),
            fraction_below: c.threshold.map(|t| t.fraction),
            in_band: c.threshold.map(|t| t.in_band),
            precision_reference: c.estimate_reference.map(|p| p.precision),
            recall_reference: c.estimate_reference.map(|p| p.recall),
            f1_reference: c.estimate_reference.map(|p| p.f1),
            precision_refined: c.estimate_refined.map(|p| p.precision),
            recall_refined: c.estimate_refined.map(|p| p.recall),
            f1_refined: c.estimate_refined.map(|p| p.f1),
        })
        .collect();
    let path = dir.join(ESTIMATED_F1_CSV);
    write_rows(&path, &estimates)?;
    written.push(path);

    let scatter: Vec<ScatterRow> = [("all", report.scatter.all), ("crops", report.scatter.crops)]
        .into_iter()
        .map(|(subset, g)| ScatterRow {
            subset,
            refined_better: g.refined_better,
            reference_better: g.reference_better,
            ties: g.ties,
            refined_mean_margin: g.refined_mean_margin,
            reference_mean_margin: g.reference_mean_margin,
        })
        .collect();
    let path = dir.join(SCATTER_CSV);
    write_rows(&path, &scatter)?;
    written.push(path);

    for c in report.classes.iter().filter(|c| !c.curve.is_empty()) {
        let path = dir.join(CURVES_DIR).join(curve_file_name(c));
        let body = serde_json::to_vec_pretty(&CurveFile {
            code: c.code,
            class: &c.name,
            e_max: 1.0,
            points: &c.curve,
        })
        .map_err(|e| Error::format(&path, e))?;
        write_bytes_atomic(&path, &body)?;
        written.push(path);
    }
    Ok(written)
}
