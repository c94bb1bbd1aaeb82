//! Training loops for the two-step procedure: supervised teacher training,
//! cross-model supervision on unlabelled data, student distillation with
//! frozen teachers, and the supervised-only / CMS / CPS baselines. All loops
//! run mini-batch SGD with momentum, weight decay and a polynomial
//! learning-rate schedule, and are bit-deterministic given their config.

mod loops;

pub use loops::{
    train_cms_baseline, train_cps_baseline, train_cross_model, train_student_sslkd,
    train_supervised,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{CoreError, Result};
use crate::hash::Fnv64;
use crate::losses::LossWeights;
use crate::metrics::MetricsReport;
use crate::nn::Param;
use crate::tensor::{LabelMap, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iters: u64,
    /// Student iterations trained on the supervised loss alone before the
    /// distillation terms activate.
    pub distill_warmup_iters: u64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Validation cadence in iterations; 0 disables in-loop evaluation.
    pub eval_every: u64,
    /// Keep the labelled supervised term active while teachers cross-train
    /// on unlabelled data (guards against pseudo-label drift).
    pub labelled_in_cross: bool,
    /// Optional confidence threshold below which pseudo-labelled pixels are
    /// ignored. Off by default.
    pub pseudo_threshold: Option<f64>,
    /// Random horizontal/vertical flips on training batches. Off by
    /// default: the defaults favour determinism-friendly runs.
    pub augment_flips: bool,
    /// Learn a 1x1 projection from the student's feature tap onto the
    /// teacher's before the feature-distillation term; only needed when the
    /// taps differ in width. Off by default (matching taps by
    /// construction).
    pub feature_projection: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.05,
            lr_power: 0.9,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 4,
            max_iters: 500,
            distill_warmup_iters: 100,
            loss_weights: LossWeights::default(),
            seed: 0,
            eval_every: 0,
            labelled_in_cross: true,
            pseudo_threshold: None,
            augment_flips: false,
            feature_projection: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 || !self.base_lr.is_finite() {
            return Err(CoreError::Config(format!(
                "base_lr must be > 0, got {}",
                self.base_lr
            )));
        }
        if self.lr_power <= 0.0 {
            return Err(CoreError::Config(format!(
                "lr_power must be > 0, got {}",
                self.lr_power
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(CoreError::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be >= 1".into()));
        }
        // warm-up equal to max_iters is the degenerate all-supervised
        // schedule and is allowed
        if self.distill_warmup_iters > self.max_iters {
            return Err(CoreError::Config(format!(
                "distill_warmup_iters {} exceeds max_iters {}",
                self.distill_warmup_iters, self.max_iters
            )));
        }
        if let Some(t) = self.pseudo_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CoreError::Config(format!(
                    "pseudo_threshold must be in [0,1], got {t}"
                )));
            }
        }
        self.loss_weights.validate()
    }
}

/// One logged training iteration. Components not computed by a stage are
/// recorded as exactly zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: u64,
    pub lr: f64,
    pub l_sup: f64,
    pub l_dis_f: f64,
    pub l_dis_p: f64,
    pub l_unsup: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub iter: u64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: String,
    /// The warm-up length this run was gated by (0 for non-distillation
    /// stages), so every log states its own schedule.
    pub distill_warmup_iters: u64,
    pub records: Vec<IterRecord>,
    pub val: Vec<ValPoint>,
    /// Stamped by the runner; the trainers themselves are clock-free.
    pub wall_secs: f64,
    pub warnings: Vec<String>,
}

impl TrainLog {
    pub fn new(stage: &str) -> Self {
        TrainLog {
            stage: String::from(stage),
            distill_warmup_iters: 0,
            records: Vec::new(),
            val: Vec::new(),
            wall_secs: 0.0,
            warnings: Vec::new(),
        }
    }
}

/// SGD with momentum and (uniform) weight decay:
/// `v = momentum * v + grad + wd * w; w -= lr * v`.
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
        }
        assert_eq!(
            self.velocity.len(),
            params.len(),
            "optimizer bound to a different model"
        );
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let vd = v.data_mut();
            let gd = p.grad.data();
            let wd = p.value.data_mut();
            for i in 0..vd.len() {
                vd[i] = self.momentum * vd[i] + gd[i] + self.weight_decay * wd[i];
                wd[i] -= lr * vd[i];
            }
        }
    }
}

/// Deterministic epoch-reshuffling batch iterator. The emitted index
/// sequence is a pure function of `(n, batch_size, seed)`; batches wrap
/// across epoch boundaries so pools smaller than a batch still cycle.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        assert!(n > 0 && batch > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchSampler {
            order,
            pos: 0,
            batch,
            rng,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Derives per-stream seeds (labelled vs unlabelled samplers, stage scopes)
/// from one root seed.
pub fn stream_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Fnv64::new();
    h.update_u64(seed);
    h.update(tag.as_bytes());
    h.finish()
}

/// Stacks the selected samples into a `B x 3 x H x W` batch; shapes must
/// agree across the partition.
pub fn stack_images(samples: &[Sample], idxs: &[usize]) -> Result<Tensor> {
    let (h, w) = samples[idxs[0]].hw();
    let mut out = Tensor::zeros(&[idxs.len(), 3, h, w]);
    let plane = 3 * h * w;
    for (slot, &i) in idxs.iter().enumerate() {
        let s = &samples[i];
        if s.hw() != (h, w) {
            return Err(CoreError::Config(format!(
                "sample {} is {:?}, batch expects {h}x{w}; partitions must be uniform",
                s.id,
                s.hw()
            )));
        }
        out.data_mut()[slot * plane..][..plane].copy_from_slice(s.image.data());
    }
    Ok(out)
}

/// Stacks masks for the selected samples into a `B x H x W` label batch.
pub fn stack_masks(samples: &[Sample], idxs: &[usize]) -> Result<LabelMap> {
    let (h, w) = samples[idxs[0]].hw();
    let mut out = LabelMap::zeros(&[idxs.len(), h, w]);
    let plane = h * w;
    for (slot, &i) in idxs.iter().enumerate() {
        let mask = samples[i].mask.as_ref().ok_or_else(|| {
            CoreError::Config(format!(
                "sample {} has no mask but is used as labelled data",
                samples[i].id
            ))
        })?;
        out.data_mut()[slot * plane..][..plane].copy_from_slice(mask.data());
    }
    Ok(out)
}

/// Randomly mirrors each batch element horizontally and/or vertically,
/// keeping image and labels aligned. Two independent coin flips per sample,
/// drawn from the stage's dedicated augmentation stream.
pub fn flip_batch<R: rand::Rng>(
    images: &mut Tensor,
    mut labels: Option<&mut LabelMap>,
    rng: &mut R,
) {
    let (bsz, c, h, w) = images.dims4();
    for b in 0..bsz {
        let flip_h = rng.random::<bool>();
        let flip_v = rng.random::<bool>();
        if !flip_h && !flip_v {
            continue;
        }
        let remap = |y: usize, x: usize| -> usize {
            let yy = if flip_v { h - 1 - y } else { y };
            let xx = if flip_h { w - 1 - x } else { x };
            yy * w + xx
        };
        let img = images.data_mut();
        for ci in 0..c {
            let plane = &mut img[(b * c + ci) * h * w..][..h * w];
            let orig = plane.to_vec();
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = orig[remap(y, x)];
                }
            }
        }
        if let Some(lab) = labels.as_deref_mut() {
            let plane = &mut lab.data_mut()[b * h * w..][..h * w];
            let orig = plane.to_vec();
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = orig[remap(y, x)];
                }
            }
        }
    }
}
