//! Dataset-level evaluation: forward, softmax, argmax, confusion, metrics.

use alloc::format;
use alloc::string::String;

use crate::dataset::Sample;
use crate::error::{CoreError, Result};
use crate::losses::{pseudo_labels, softmax_probs, LabelSource};
use crate::metrics::{confusion_counts, metrics_from_confusion, Confusion, MetricsReport};
use crate::model::{estimate_gflops, Mode, SegModel};

/// Evaluates a frozen model over a mask-bearing partition; confusions are
/// summed across samples (micro-average) before metrics are derived. The
/// report's GFLOPs figure is the analytic cost at the spec's declared input
/// size.
pub fn evaluate(
    model: &SegModel,
    samples: &[Sample],
    ignore_index: Option<u8>,
) -> Result<MetricsReport> {
    if model.mode() != Mode::Eval {
        return Err(CoreError::Config(
            "evaluate requires the model in eval mode".into(),
        ));
    }
    if samples.is_empty() {
        return Err(CoreError::Config(
            "evaluate called on an empty partition".into(),
        ));
    }
    let mut total = Confusion::default();
    for s in samples {
        let mask = s
            .mask
            .as_ref()
            .ok_or_else(|| CoreError::Config(format!("sample {} has no mask", s.id)))?;
        let (h, w) = s.hw();
        let batched = s.image.clone().reshaped(&[1, 3, h, w])?;
        let (_, logits) = model.forward_frozen(&batched)?;
        let probs = softmax_probs(&logits.reshaped(&[2, h, w])?)?;
        let (pred, _) = pseudo_labels(&probs, None, LabelSource::Aggregated)?;
        total = total.add(&confusion_counts(&pred, mask, ignore_index)?);
    }
    let mut report = metrics_from_confusion(&total)?;
    report.gflops = estimate_gflops(model.spec(), model.spec().input_size)?;
    Ok(report)
}

/// `evaluate` with the report's model id filled in.
pub fn evaluate_as(
    model_id: &str,
    model: &SegModel,
    samples: &[Sample],
    ignore_index: Option<u8>,
) -> Result<MetricsReport> {
    let mut report = evaluate(model, samples, ignore_index)?;
    report.model_id = String::from(model_id);
    Ok(report)
}
