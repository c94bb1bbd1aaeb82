//! Losses and probability transforms for the two-step distillation scheme:
//! pixel-averaged cross-entropy, feature and probability mean-absolute-error
//! distillation terms, teacher aggregation, pseudo-label extraction, and the
//! weighted total.
//!
//! Per-image functions operate on the `ProbMap`/`FeatureMap`/`LabelMap`
//! domain types; the `*_grad` variants are the batched forms the trainers
//! and gradient checks drive, returning the loss value together with the
//! gradient with respect to the student-side argument. Teacher-side
//! arguments are always treated as constants.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::FeatureMap;
use crate::tensor::{LabelMap, Tensor};

/// Probabilities are clamped here before the log in cross-entropy; prevents
/// infinities on saturated softmax outputs.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// The conventional ignore value for unlabeled / filtered pixels.
pub const IGNORE_LABEL: u8 = 255;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Per-pixel class probability field, shape `n_classes x H x W`; every
/// pixel's class vector lies on the probability simplex (checked to 1e-6).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    values: Tensor,
}

impl ProbMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(CoreError::Shape(format!(
                "ProbMap expects C x H x W, got {:?}",
                values.shape()
            )));
        }
        let (c, h, w) = values.dims3();
        let plane = h * w;
        let d = values.data();
        for pix in 0..plane {
            let mut sum = 0.0;
            for ci in 0..c {
                let v = d[ci * plane + pix];
                if !v.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&v) {
                    return Err(CoreError::Validation(format!(
                        "probability out of [0,1] at class {ci}, pixel {pix}: {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(CoreError::Validation(format!(
                    "pixel {pix} probabilities sum to {sum}, not 1"
                )));
            }
        }
        Ok(ProbMap { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn n_classes(&self) -> usize {
        self.values.shape()[0]
    }
}

/// Who produced a pseudo label; cross-model trainers assert the producer is
/// never its own consumer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Teacher1,
    Teacher2,
    Aggregated,
}

/// Hard per-pixel class assignment derived from a `ProbMap`; carries no
/// gradient back to its producer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoLabel {
    pub values: LabelMap,
    pub source: LabelSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sup: f64,
    pub dis_f: f64,
    pub dis_p: f64,
    pub unsup: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // "linear addition" with no stated coefficients: all ones.
        LossWeights {
            sup: 1.0,
            dis_f: 1.0,
            dis_p: 1.0,
            unsup: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sup", self.sup),
            ("dis_f", self.dis_f),
            ("dis_p", self.dis_p),
            ("unsup", self.unsup),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The four loss components of one student iteration plus their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub sup: f64,
    pub dis_f: f64,
    pub dis_p: f64,
    pub unsup: f64,
    pub weights: LossWeights,
}

impl LossParts {
    pub fn zero(weights: LossWeights) -> Self {
        LossParts {
            sup: 0.0,
            dis_f: 0.0,
            dis_p: 0.0,
            unsup: 0.0,
            weights,
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Numerically stable per-pixel softmax over the class axis of a
/// `B x C x H x W` tensor.
pub fn softmax_batch(logits: &Tensor) -> Result<Tensor> {
    if !logits.all_finite() {
        return Err(CoreError::Validation(
            "softmax input contains non-finite values".into(),
        ));
    }
    let (b, c, h, w) = logits.dims4();
    let plane = h * w;
    let mut out = Tensor::zeros(logits.shape());
    let src = logits.data();
    let dst = out.data_mut();
    for bi in 0..b {
        let base = bi * c * plane;
        for pix in 0..plane {
            let mut m = f64::NEG_INFINITY;
            for ci in 0..c {
                m = m.max(src[base + ci * plane + pix]);
            }
            let mut sum = 0.0;
            for ci in 0..c {
                let e = libm::exp(src[base + ci * plane + pix] - m);
                dst[base + ci * plane + pix] = e;
                sum += e;
            }
            for ci in 0..c {
                dst[base + ci * plane + pix] /= sum;
            }
        }
    }
    Ok(out)
}

/// Per-image softmax producing a validated `ProbMap`.
pub fn softmax_probs(logits: &Tensor) -> Result<ProbMap> {
    if logits.shape().len() != 3 {
        return Err(CoreError::Shape(format!(
            "expected logits C x H x W, got {:?}",
            logits.shape()
        )));
    }
    let (c, h, w) = logits.dims3();
    let batched = logits.clone().reshaped(&[1, c, h, w])?;
    let probs = softmax_batch(&batched)?;
    ProbMap::new(probs.reshaped(&[c, h, w])?)
}

/// Backpropagates `grad_probs` through a softmax with output `probs`:
/// `g_z = p * (g_p - sum_j g_p_j * p_j)` per pixel.
pub fn softmax_backward(probs: &Tensor, grad_probs: &Tensor) -> Tensor {
    let (b, c, h, w) = probs.dims4();
    let plane = h * w;
    let mut gz = Tensor::zeros(probs.shape());
    let p = probs.data();
    let gp = grad_probs.data();
    let g = gz.data_mut();
    for bi in 0..b {
        let base = bi * c * plane;
        for pix in 0..plane {
            let mut dot = 0.0;
            for ci in 0..c {
                let at = base + ci * plane + pix;
                dot += gp[at] * p[at];
            }
            for ci in 0..c {
                let at = base + ci * plane + pix;
                g[at] = p[at] * (gp[at] - dot);
            }
        }
    }
    gz
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

/// Mean over non-ignored pixels of `-ln p[true class]`, from probabilities.
pub fn supervised_ce(probs: &ProbMap, labels: &LabelMap, ignore_index: Option<u8>) -> Result<f64> {
    let (c, h, w) = probs.values.dims3();
    let (lh, lw) = labels.dims2();
    if (lh, lw) != (h, w) {
        return Err(CoreError::Shape(format!(
            "labels {lh}x{lw} do not match probabilities {h}x{w}"
        )));
    }
    let plane = h * w;
    let p = probs.values.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for (pix, &y) in labels.data().iter().enumerate() {
        if Some(y) == ignore_index {
            continue;
        }
        if y as usize >= c {
            return Err(CoreError::Validation(format!(
                "label {y} out of range for {c} classes at pixel {pix}"
            )));
        }
        total -= libm::log(p[y as usize * plane + pix].max(CE_PROB_FLOOR));
        count += 1;
    }
    if count == 0 {
        return Err(CoreError::Validation(
            "all pixels ignored: mean cross-entropy undefined".into(),
        ));
    }
    Ok(total / count as f64)
}

/// Fused softmax + cross-entropy on batched logits; returns the loss and its
/// gradient with respect to the logits (`(p - onehot) / n_valid` on valid
/// pixels, zero on ignored ones).
pub fn ce_loss_grad(
    logits: &Tensor,
    labels: &LabelMap,
    ignore_index: Option<u8>,
) -> Result<(f64, Tensor)> {
    let (b, c, h, w) = logits.dims4();
    if labels.shape() != [b, h, w] {
        return Err(CoreError::Shape(format!(
            "labels {:?} do not match logits {:?}",
            labels.shape(),
            logits.shape()
        )));
    }
    let probs = softmax_batch(logits)?;
    let plane = h * w;
    let p = probs.data();
    let lab = labels.data();

    let mut n_valid = 0usize;
    for &y in lab {
        if Some(y) != ignore_index {
            if y as usize >= c {
                return Err(CoreError::Validation(format!(
                    "label {y} out of range for {c} classes"
                )));
            }
            n_valid += 1;
        }
    }
    if n_valid == 0 {
        return Err(CoreError::Validation(
            "all pixels ignored: mean cross-entropy undefined".into(),
        ));
    }

    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    let g = grad.data_mut();
    let inv_n = 1.0 / n_valid as f64;
    for bi in 0..b {
        let base = bi * c * plane;
        for pix in 0..plane {
            let y = lab[bi * plane + pix];
            if Some(y) == ignore_index {
                continue;
            }
            let py = p[base + y as usize * plane + pix];
            loss -= libm::log(py.max(CE_PROB_FLOOR));
            for ci in 0..c {
                let at = base + ci * plane + pix;
                let onehot = if ci == y as usize { 1.0 } else { 0.0 };
                g[at] = (p[at] - onehot) * inv_n;
            }
        }
    }
    Ok((loss * inv_n, grad))
}

// ---------------------------------------------------------------------------
// Mean absolute error terms
// ---------------------------------------------------------------------------

fn mae_value(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
}

/// Feature-level distillation loss: mean absolute difference over all
/// `C * H' * W'` elements. The teacher argument is a constant: no gradient
/// flows into it.
pub fn feature_mae(f_teacher: &FeatureMap, f_student: &FeatureMap) -> Result<f64> {
    if f_teacher.values.shape() != f_student.values.shape() {
        return Err(CoreError::Shape(format!(
            "feature shapes differ: teacher {:?} vs student {:?} (feature-tap misconfiguration)",
            f_teacher.values.shape(),
            f_student.values.shape()
        )));
    }
    Ok(mae_value(f_teacher.values.data(), f_student.values.data()))
}

/// Batched MAE with the gradient w.r.t. `pred`; the subgradient at zero
/// difference is 0.
pub fn mae_loss_grad(target: &Tensor, pred: &Tensor) -> Result<(f64, Tensor)> {
    if target.shape() != pred.shape() {
        return Err(CoreError::Shape(format!(
            "MAE shapes differ: target {:?} vs pred {:?}",
            target.shape(),
            pred.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let g = grad.data_mut();
    let mut total = 0.0;
    for ((gi, &t), &p) in g.iter_mut().zip(target.data()).zip(pred.data()) {
        let d = p - t;
        total += d.abs();
        *gi = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((total / n, grad))
}

/// Probability-level distillation loss between the aggregated teacher
/// probabilities and the student probabilities, averaged over
/// `n_classes * H * W` (the same convention as the feature term).
pub fn prob_mae(p_agg: &ProbMap, p_student: &ProbMap) -> Result<f64> {
    if p_agg.values.shape() != p_student.values.shape() {
        return Err(CoreError::Shape(format!(
            "probability shapes differ: {:?} vs {:?}",
            p_agg.values.shape(),
            p_student.values.shape()
        )));
    }
    Ok(mae_value(p_agg.values.data(), p_student.values.data()))
}

/// Probability MAE computed from student logits, with the gradient chained
/// through the softmax back to the logits. `p_target` is a constant.
pub fn prob_mae_loss_grad(p_target: &Tensor, logits: &Tensor) -> Result<(f64, Tensor)> {
    if p_target.shape() != logits.shape() {
        return Err(CoreError::Shape(format!(
            "probability target {:?} does not match logits {:?}",
            p_target.shape(),
            logits.shape()
        )));
    }
    let probs = softmax_batch(logits)?;
    let (value, grad_probs) = mae_loss_grad(p_target, &probs)?;
    Ok((value, softmax_backward(&probs, &grad_probs)))
}

// ---------------------------------------------------------------------------
// Aggregation and pseudo labels
// ---------------------------------------------------------------------------

/// Elementwise arithmetic mean of two probability maps; the mean of simplex
/// points stays on the simplex, so no re-normalization is needed.
pub fn aggregate_teacher_probs(p1: &ProbMap, p2: &ProbMap) -> Result<ProbMap> {
    if p1.values.shape() != p2.values.shape() {
        return Err(CoreError::Shape(format!(
            "probability shapes differ: {:?} vs {:?}",
            p1.values.shape(),
            p2.values.shape()
        )));
    }
    let data: Vec<f64> = p1
        .values
        .data()
        .iter()
        .zip(p2.values.data())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    ProbMap::new(Tensor::from_vec(p1.values.shape(), data)?)
}

/// Batched mean of two probability tensors.
pub fn mean_probs(p1: &Tensor, p2: &Tensor) -> Result<Tensor> {
    if p1.shape() != p2.shape() {
        return Err(CoreError::Shape(format!(
            "probability shapes differ: {:?} vs {:?}",
            p1.shape(),
            p2.shape()
        )));
    }
    let data: Vec<f64> = p1
        .data()
        .iter()
        .zip(p2.data())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Tensor::from_vec(p1.shape(), data)
}

/// Per-pixel argmax with ties broken toward the lower class index. With a
/// threshold, pixels whose top probability falls below it are flagged
/// invalid in the returned mask. The labels are constants to the producer.
pub fn pseudo_labels(
    p: &ProbMap,
    threshold: Option<f64>,
    source: LabelSource,
) -> Result<(PseudoLabel, Vec<bool>)> {
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(CoreError::Config(format!(
                "threshold must be in [0,1], got {t}"
            )));
        }
    }
    let (c, h, w) = p.values.dims3();
    let plane = h * w;
    let d = p.values.data();
    let mut labels = vec![0u8; plane];
    let mut valid = vec![true; plane];
    for pix in 0..plane {
        let mut best = 0usize;
        let mut best_p = d[pix];
        for ci in 1..c {
            let v = d[ci * plane + pix];
            if v > best_p {
                best_p = v;
                best = ci;
            }
        }
        labels[pix] = best as u8;
        if let Some(t) = threshold {
            valid[pix] = best_p >= t;
        }
    }
    Ok((
        PseudoLabel {
            values: LabelMap::from_vec(&[h, w], labels)?,
            source,
        },
        valid,
    ))
}

/// Batched argmax over probabilities, mapping below-threshold pixels to
/// `IGNORE_LABEL`; this is the trainer-facing form.
pub fn argmax_labels_batch(probs: &Tensor, threshold: Option<f64>) -> Result<LabelMap> {
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(CoreError::Config(format!(
                "threshold must be in [0,1], got {t}"
            )));
        }
    }
    let (b, c, h, w) = probs.dims4();
    let plane = h * w;
    let d = probs.data();
    let mut labels = vec![0u8; b * plane];
    for bi in 0..b {
        let base = bi * c * plane;
        for pix in 0..plane {
            let mut best = 0usize;
            let mut best_p = d[base + pix];
            for ci in 1..c {
                let v = d[base + ci * plane + pix];
                if v > best_p {
                    best_p = v;
                    best = ci;
                }
            }
            labels[bi * plane + pix] = match threshold {
                Some(t) if best_p < t => IGNORE_LABEL,
                _ => best as u8,
            };
        }
    }
    LabelMap::from_vec(&[b, h, w], labels)
}

// ---------------------------------------------------------------------------
// Total
// ---------------------------------------------------------------------------

/// Weighted linear combination of the four components.
pub fn total_sslkd_loss(parts: &LossParts) -> Result<f64> {
    parts.weights.validate()?;
    for (name, v) in [
        ("sup", parts.sup),
        ("dis_f", parts.dis_f),
        ("dis_p", parts.dis_p),
        ("unsup", parts.unsup),
    ] {
        if !v.is_finite() {
            return Err(CoreError::Validation(format!(
                "loss component {name} is non-finite: {v}"
            )));
        }
    }
    let w = &parts.weights;
    Ok(w.sup * parts.sup + w.dis_f * parts.dis_f + w.dis_p * parts.dis_p + w.unsup * parts.unsup)
}
