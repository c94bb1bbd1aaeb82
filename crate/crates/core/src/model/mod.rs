//! The segmentation model zoo: one abstraction (`SegModel`, a backbone
//! feature tap plus per-pixel logits) over two concrete families, with
//! deterministic initialization, parameter accounting and content hashing.

mod dilated;
pub mod flops;
mod pool_index;
mod spec;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dilated::DilatedNet;
pub use flops::{estimate_flops, estimate_gflops, plan_flops, PlanOp};
pub use pool_index::PoolIndexNet;
pub use spec::{BackboneDepth, Family, ModelSpec};

use crate::error::{CoreError, Result};
use crate::hash::Fnv64;
use crate::nn::Param;
use crate::tensor::Tensor;

/// A backbone feature map: the tensor exported at the feature tap
/// (`C x H' x W'` per image, batched here as `B x C x H' x W'`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub values: Tensor,
}

impl FeatureMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if !values.all_finite() {
            return Err(CoreError::Validation(
                "feature map contains non-finite values".into(),
            ));
        }
        Ok(FeatureMap { values })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

// one network per SegModel; the size spread between families is fine
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
enum Net {
    Dilated(DilatedNet),
    PoolIndex(PoolIndexNet),
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
enum NetCache {
    Dilated(dilated::DilatedCache),
    PoolIndex(pool_index::PoolIndexCache),
}

/// An encoder-decoder segmentation network exposing a backbone feature tap
/// and per-pixel logits.
///
/// Train-mode forwards store the activation cache needed by `backward` and
/// update batch-norm running statistics; eval-mode forwards are pure
/// (`forward_frozen` takes `&self`, which is how trainers keep teachers
/// provably fixed).
#[derive(Clone, Debug)]
pub struct SegModel {
    spec: ModelSpec,
    net: Net,
    mode: Mode,
    cache: Option<NetCache>,
}

/// Builds an initialized model; parameters are a pure function of
/// `(spec, init_seed)`.
pub fn build_model(spec: &ModelSpec, init_seed: u64) -> Result<SegModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let net = match (spec.family, spec.backbone_depth) {
        (Family::DilatedPyramid, _) => Net::Dilated(DilatedNet::new(spec, &mut rng)),
        (Family::PoolIndex, BackboneDepth::Deep) => {
            Net::PoolIndex(PoolIndexNet::new(spec, &mut rng))
        }
        (Family::PoolIndex, BackboneDepth::Shallow) => {
            return Err(CoreError::Config(
                "pool_index family has no shallow variant; use backbone_depth = deep".into(),
            ));
        }
    };
    Ok(SegModel {
        spec: spec.clone(),
        net,
        mode: Mode::Train,
        cache: None,
    })
}

impl SegModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Eval {
            self.cache = None;
        }
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        if images.shape().len() != 4 || images.shape()[1] != 3 {
            return Err(CoreError::Shape(format!(
                "expected images shaped B x 3 x H x W, got {:?}",
                images.shape()
            )));
        }
        let (h, w) = (images.shape()[2], images.shape()[3]);
        let s = self.spec.family.stride();
        if h % s != 0 || w % s != 0 {
            return Err(CoreError::Shape(format!(
                "spatial size {h}x{w} must be a multiple of the family stride {s}"
            )));
        }
        Ok(())
    }

    pub fn check_input_size(&self, n: usize) -> Result<()> {
        let s = self.spec.family.stride();
        if !n.is_multiple_of(s) {
            return Err(CoreError::Shape(format!(
                "input size {n} must be a multiple of the family stride {s}"
            )));
        }
        Ok(())
    }

    /// Forward pass honouring the current mode: in `Train` it stores the
    /// backward cache and updates normalization statistics, in `Eval` it is
    /// bit-deterministic and mutation-free. Returns (features, logits),
    /// shaped `B x tap_channels x H/stride x W/stride` and
    /// `B x n_classes x H x W`.
    pub fn forward(&mut self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_images(images)?;
        match self.mode {
            Mode::Eval => {
                let (f, l) = match &self.net {
                    Net::Dilated(n) => n.forward_eval(images),
                    Net::PoolIndex(n) => n.forward_eval(images),
                };
                Ok((f, l))
            }
            Mode::Train => {
                let (f, l, cache) = match &mut self.net {
                    Net::Dilated(n) => {
                        let (f, l, c) = n.forward_train(images);
                        (f, l, NetCache::Dilated(c))
                    }
                    Net::PoolIndex(n) => {
                        let (f, l, c) = n.forward_train(images);
                        (f, l, NetCache::PoolIndex(c))
                    }
                };
                self.cache = Some(cache);
                Ok((f, l))
            }
        }
    }

    /// Eval-only forward through a shared reference; fails unless the model
    /// is in eval mode. Frozen teachers are driven exclusively through this.
    pub fn forward_frozen(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        if self.mode != Mode::Eval {
            return Err(CoreError::Config(
                "frozen forward requires the model to be in eval mode".into(),
            ));
        }
        self.check_images(images)?;
        Ok(match &self.net {
            Net::Dilated(n) => n.forward_eval(images),
            Net::PoolIndex(n) => n.forward_eval(images),
        })
    }

    /// Backpropagates from the logits (and optionally the feature tap) of
    /// the most recent train-mode forward, accumulating parameter gradients.
    pub fn backward(&mut self, grad_logits: &Tensor, grad_features: Option<&Tensor>) -> Result<()> {
        let cache = self.cache.take().ok_or_else(|| {
            CoreError::Config("backward called without a preceding train-mode forward".into())
        })?;
        match (&mut self.net, &cache) {
            (Net::Dilated(n), NetCache::Dilated(c)) => n.backward(c, grad_logits, grad_features),
            (Net::PoolIndex(n), NetCache::PoolIndex(c)) => {
                n.backward(c, grad_logits, grad_features)
            }
            _ => unreachable!("cache family matches net family by construction"),
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        match &self.net {
            Net::Dilated(n) => n.params(),
            Net::PoolIndex(n) => n.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.net {
            Net::Dilated(n) => n.params_mut(),
            Net::PoolIndex(n) => n.params_mut(),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Exact count of scalar trainable parameters (running statistics are
    /// buffers, not parameters).
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Every named tensor that defines the model state: trainable parameters
    /// followed by normalization buffers. This is the checkpoint payload and
    /// the content-hash domain.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        let buffers = match &self.net {
            Net::Dilated(n) => n.buffers(),
            Net::PoolIndex(n) => n.buffers(),
        };
        out.extend(buffers);
        out
    }

    /// Overwrites parameters and buffers by name; every stored tensor must
    /// match an existing name and shape (used by checkpoint loading).
    pub fn load_named_tensors(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        for (name, value) in tensors {
            let mut found = false;
            for p in self.params_mut() {
                if &p.name == name {
                    if p.value.shape() != value.shape() {
                        return Err(CoreError::Shape(format!(
                            "checkpoint tensor {name}: shape {:?} != model {:?}",
                            value.shape(),
                            p.value.shape()
                        )));
                    }
                    p.value = value.clone();
                    p.grad = Tensor::zeros(value.shape());
                    found = true;
                    break;
                }
            }
            if !found {
                let buffers = match &mut self.net {
                    Net::Dilated(n) => n.buffers_mut(),
                    Net::PoolIndex(n) => n.buffers_mut(),
                };
                for (bname, buf) in buffers {
                    if &bname == name {
                        if buf.shape() != value.shape() {
                            return Err(CoreError::Shape(format!(
                                "checkpoint buffer {name}: shape {:?} != model {:?}",
                                value.shape(),
                                buf.shape()
                            )));
                        }
                        *buf = value.clone();
                        found = true;
                        break;
                    }
                }
            }
            if !found {
                return Err(CoreError::Validation(format!(
                    "checkpoint contains unknown tensor {name}"
                )));
            }
        }
        Ok(())
    }

    /// Deterministic fingerprint of all named tensors (parameters and
    /// buffers); any drift in weights or normalization statistics changes it.
    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv64::new();
        for (name, t) in self.named_tensors() {
            h.update(name.as_bytes());
            h.update_u64(t.shape().len() as u64);
            for &d in t.shape() {
                h.update_u64(d as u64);
            }
            for &v in t.data() {
                h.update_f64(v);
            }
        }
        h.finish()
    }

    pub fn flops_plan(&self, input_size: usize) -> flops::Plan {
        match &self.net {
            Net::Dilated(n) => n.flops_plan(input_size),
            Net::PoolIndex(n) => n.flops_plan(input_size),
        }
    }
}
