//! Confusion-matrix segmentation metrics with the road class (1) as
//! positive. Dataset-level metrics are micro-averaged: per-image confusions
//! are summed, then the ratios are taken once.

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::losses::PseudoLabel;
use crate::tensor::LabelMap;

/// Pixel counts with road = positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Elementwise sum; dataset accumulation is a fold of this.
    pub fn add(&self, other: &Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

/// Derived metrics plus model cost, one row of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_id: String,
    pub iou: f64,
    pub oa: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gflops: f64,
    pub n_pixels: u64,
    /// True when any metric hit a 0/0 case and was reported as 0 by
    /// convention.
    pub degenerate: bool,
}

/// Pixelwise confusion counts between a predicted label map and ground
/// truth; pixels whose ground truth equals `ignore_index` are excluded.
pub fn confusion_counts(
    pred: &PseudoLabel,
    gt: &LabelMap,
    ignore_index: Option<u8>,
) -> Result<Confusion> {
    if pred.values.shape() != gt.shape() {
        return Err(CoreError::Shape(format!(
            "prediction {:?} does not match ground truth {:?}",
            pred.values.shape(),
            gt.shape()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.values.data().iter().zip(gt.data()) {
        if Some(g) == ignore_index {
            continue;
        }
        match (p == 1, g == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Derives IoU / OA / precision / recall / F1 from counts. Any 0/0 ratio is
/// reported as 0 and flags the report as degenerate.
pub fn metrics_from_confusion(c: &Confusion) -> Result<MetricsReport> {
    let total = c.total();
    if total == 0 {
        return Err(CoreError::Config(
            "cannot derive metrics from zero pixels".into(),
        ));
    }
    let mut degenerate = false;
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_, &mut degenerate);
    let oa = ratio(c.tp + c.tn, total, &mut degenerate);
    let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut degenerate);
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport {
        model_id: String::new(),
        iou,
        oa,
        precision,
        recall,
        f1,
        gflops: 0.0,
        n_pixels: total,
        degenerate,
    })
}
