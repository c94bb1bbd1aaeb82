//! Comparison reports: a human-readable table (metric columns IoU, OA,
//! Precision, Recall, F1 as percentages to 2 decimals, then GFLOPs) plus a
//! machine-readable JSON record file. The best value in each column is
//! marked with `*` (lowest wins for GFLOPs, highest for everything else);
//! ties are marked jointly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sslkd_core::metrics::MetricsReport;

use crate::error::{AppError, AppResult};
use crate::manifest::RunManifest;

/// Table row order and display names for the models the pipeline can
/// produce. Unknown ids fall back to their raw id after the known rows.
const DISPLAY: &[(&str, &str)] = &[
    ("teacher1_sup", "Teacher #1"),
    ("teacher2_sup", "Teacher #2"),
    ("student_sup", "Student (supervised)"),
    ("teacher1_cross", "Teacher #1 w/ unlabelled (CMS)"),
    ("teacher2_cross", "Teacher #2 w/ unlabelled (CMS)"),
    ("student_cms", "Student w/ unlabelled (CMS)"),
    ("student_cps", "Student (CPS)"),
    ("student_sslkd", "Student (SSLKD)"),
];

pub fn display_name(model_id: &str) -> &str {
    DISPLAY
        .iter()
        .find(|(id, _)| *id == model_id)
        .map(|(_, name)| *name)
        .unwrap_or(model_id)
}

fn ordered_reports(manifest: &RunManifest) -> Vec<&MetricsReport> {
    let mut out: Vec<&MetricsReport> = Vec::new();
    for (id, _) in DISPLAY {
        if let Some(r) = manifest.reports.iter().find(|r| r.model_id == *id) {
            out.push(r);
        }
    }
    for r in &manifest.reports {
        if !DISPLAY.iter().any(|(id, _)| *id == r.model_id) {
            out.push(r);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRecord {
    pub model_id: String,
    pub display_name: String,
    pub iou: f64,
    pub oa: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gflops: f64,
    pub n_pixels: u64,
    pub degenerate: bool,
    pub config_hash: u64,
    pub seed: u64,
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

/// Full-scale networks read naturally at 2 decimals (e.g. "14.94"); tiny
/// desk-scale models need more digits to stay distinguishable.
pub fn gflops_str(v: f64) -> String {
    if v >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    }
}

/// Writes the table to `out_path` and the records next to it as
/// `<out_path>.json`; returns the table path.
pub fn emit_report(manifest: &RunManifest, out_path: &Path) -> AppResult<PathBuf> {
    let reports = ordered_reports(manifest);
    if reports.is_empty() {
        return Err(AppError::Config("manifest holds no metrics reports".into()));
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(AppError::io(parent))?;
        }
    }

    // per-column winners (metrics: max; gflops: min), ties marked jointly
    let col = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { reports.iter().map(|r| f(r)).collect() };
    let columns: [(&str, Vec<f64>, bool); 6] = [
        ("IoU", col(|r| r.iou), true),
        ("OA", col(|r| r.oa), true),
        ("Precision", col(|r| r.precision), true),
        ("Recall", col(|r| r.recall), true),
        ("F1", col(|r| r.f1), true),
        ("GFLOPs", col(|r| r.gflops), false),
    ];
    let best: Vec<f64> = columns
        .iter()
        .map(|(_, vals, max)| {
            vals.iter()
                .copied()
                .fold(if *max { f64::MIN } else { f64::MAX }, |a, b| {
                    if *max {
                        a.max(b)
                    } else {
                        a.min(b)
                    }
                })
        })
        .collect();

    let name_width = reports
        .iter()
        .map(|r| display_name(&r.model_id).len())
        .max()
        .unwrap()
        .max("Method".len());
    let mut table = String::new();
    table.push_str(&format!(
        "{:<name_width$}  {:>9} {:>9} {:>10} {:>9} {:>9} {:>8}\n",
        "Method", "IoU", "OA", "Precision", "Recall", "F1", "GFLOPs"
    ));
    for (ri, r) in reports.iter().enumerate() {
        let mark = |ci: usize, text: String| -> String {
            if columns[ci].1[ri] == best[ci] {
                format!("{text}*")
            } else {
                text
            }
        };
        table.push_str(&format!(
            "{:<name_width$}  {:>9} {:>9} {:>10} {:>9} {:>9} {:>8}\n",
            display_name(&r.model_id),
            mark(0, pct(r.iou)),
            mark(1, pct(r.oa)),
            mark(2, pct(r.precision)),
            mark(3, pct(r.recall)),
            mark(4, pct(r.f1)),
            mark(5, gflops_str(r.gflops)),
        ));
    }
    table.push_str("(* best per column; metrics micro-averaged over validation pixels)\n");
    fs::write(out_path, &table).map_err(AppError::io(out_path))?;

    let records: Vec<ReportRecord> = reports
        .iter()
        .map(|r| ReportRecord {
            model_id: r.model_id.clone(),
            display_name: display_name(&r.model_id).to_string(),
            iou: r.iou,
            oa: r.oa,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            gflops: r.gflops,
            n_pixels: r.n_pixels,
            degenerate: r.degenerate,
            config_hash: manifest.config_hash,
            seed: manifest.seed,
        })
        .collect();
    let json_path = PathBuf::from(format!("{}.json", out_path.display()));
    let json = serde_json::to_string_pretty(&records)
        .map_err(|e| AppError::Runtime(format!("record serialization failed: {e}")))?;
    fs::write(&json_path, json).map_err(AppError::io(&json_path))?;
    Ok(out_path.to_path_buf())
}
