//! Pool-index family: symmetric encoder/decoder where each decoder stage
//! upsamples by scattering through the max-pool indices recorded by the
//! matching encoder stage. Structurally unlike the dilated-pyramid family,
//! which is what makes it a complementary second teacher; its
//! full-resolution decoder convs also make it the most expensive network in
//! the zoo.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::flops::PlanOp;
use crate::model::spec::ModelSpec;
use crate::nn::{
    max_unpool2_backward, max_unpool2_forward, maxpool2_backward, maxpool2_forward, CbrCache,
    Conv2d, ConvBnRelu, Param,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PoolIndexNet {
    enc1a: ConvBnRelu,
    enc1b: ConvBnRelu,
    enc2a: ConvBnRelu,
    enc2b: ConvBnRelu,
    enc3a: ConvBnRelu,
    enc3b: ConvBnRelu,
    dec3a: ConvBnRelu,
    dec3b: ConvBnRelu,
    dec2a: ConvBnRelu,
    dec2b: ConvBnRelu,
    dec1a: ConvBnRelu,
    dec1b: ConvBnRelu,
    classifier: Conv2d,
    base: usize,
}

#[derive(Clone, Debug)]
pub struct PoolIndexCache {
    enc1a: CbrCache,
    enc1b: CbrCache,
    idx1: Vec<u32>,
    enc2a: CbrCache,
    enc2b: CbrCache,
    idx2: Vec<u32>,
    enc3a: CbrCache,
    enc3b: CbrCache,
    dec3a: CbrCache,
    dec3b: CbrCache,
    dec2a: CbrCache,
    dec2b: CbrCache,
    dec1a: CbrCache,
    dec1b: CbrCache,
    dec_out: Tensor,
    hw: (usize, usize),
}

impl PoolIndexNet {
    pub fn new<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Self {
        let c = spec.base_channels;
        PoolIndexNet {
            enc1a: ConvBnRelu::new("enc1a", 3, c, 3, 1, 1, 1, rng),
            enc1b: ConvBnRelu::new("enc1b", c, c, 3, 1, 1, 1, rng),
            enc2a: ConvBnRelu::new("enc2a", c, 2 * c, 3, 1, 1, 1, rng),
            enc2b: ConvBnRelu::new("enc2b", 2 * c, 2 * c, 3, 1, 1, 1, rng),
            enc3a: ConvBnRelu::new("enc3a", 2 * c, 4 * c, 3, 1, 1, 1, rng),
            enc3b: ConvBnRelu::new("enc3b", 4 * c, 4 * c, 3, 1, 1, 1, rng),
            dec3a: ConvBnRelu::new("dec3a", 4 * c, 4 * c, 3, 1, 1, 1, rng),
            dec3b: ConvBnRelu::new("dec3b", 4 * c, 2 * c, 3, 1, 1, 1, rng),
            dec2a: ConvBnRelu::new("dec2a", 2 * c, 2 * c, 3, 1, 1, 1, rng),
            dec2b: ConvBnRelu::new("dec2b", 2 * c, c, 3, 1, 1, 1, rng),
            dec1a: ConvBnRelu::new("dec1a", c, c, 3, 1, 1, 1, rng),
            dec1b: ConvBnRelu::new("dec1b", c, c, 3, 1, 1, 1, rng),
            classifier: Conv2d::new("classifier", c, spec.n_classes, 1, 1, 0, 1, true, rng),
            base: c,
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, Tensor, PoolIndexCache) {
        let (_, _, h, w) = x.dims4();
        let (e1, c_e1a) = self.enc1a.forward_train(x);
        let (e1, c_e1b) = self.enc1b.forward_train(&e1);
        let (p1, idx1) = maxpool2_forward(&e1);
        let (e2, c_e2a) = self.enc2a.forward_train(&p1);
        let (e2, c_e2b) = self.enc2b.forward_train(&e2);
        let (p2, idx2) = maxpool2_forward(&e2);
        let (e3, c_e3a) = self.enc3a.forward_train(&p2);
        let (tap, c_e3b) = self.enc3b.forward_train(&e3);

        let (d3, c_d3a) = self.dec3a.forward_train(&tap);
        let (d3, c_d3b) = self.dec3b.forward_train(&d3);
        let u2 = max_unpool2_forward(&d3, &idx2, h / 2, w / 2);
        let (d2, c_d2a) = self.dec2a.forward_train(&u2);
        let (d2, c_d2b) = self.dec2b.forward_train(&d2);
        let u1 = max_unpool2_forward(&d2, &idx1, h, w);
        let (d1, c_d1a) = self.dec1a.forward_train(&u1);
        let (d1, c_d1b) = self.dec1b.forward_train(&d1);
        let logits = self.classifier.forward(&d1);

        let cache = PoolIndexCache {
            enc1a: c_e1a,
            enc1b: c_e1b,
            idx1,
            enc2a: c_e2a,
            enc2b: c_e2b,
            idx2,
            enc3a: c_e3a,
            enc3b: c_e3b,
            dec3a: c_d3a,
            dec3b: c_d3b,
            dec2a: c_d2a,
            dec2b: c_d2b,
            dec1a: c_d1a,
            dec1b: c_d1b,
            dec_out: d1,
            hw: (h, w),
        };
        (tap, logits, cache)
    }

    pub fn forward_eval(&self, x: &Tensor) -> (Tensor, Tensor) {
        let (_, _, h, w) = x.dims4();
        let e1 = self.enc1b.forward_eval(&self.enc1a.forward_eval(x));
        let (p1, idx1) = maxpool2_forward(&e1);
        let e2 = self.enc2b.forward_eval(&self.enc2a.forward_eval(&p1));
        let (p2, idx2) = maxpool2_forward(&e2);
        let tap = self.enc3b.forward_eval(&self.enc3a.forward_eval(&p2));
        let d3 = self.dec3b.forward_eval(&self.dec3a.forward_eval(&tap));
        let u2 = max_unpool2_forward(&d3, &idx2, h / 2, w / 2);
        let d2 = self.dec2b.forward_eval(&self.dec2a.forward_eval(&u2));
        let u1 = max_unpool2_forward(&d2, &idx1, h, w);
        let d1 = self.dec1b.forward_eval(&self.dec1a.forward_eval(&u1));
        let logits = self.classifier.forward(&d1);
        (tap, logits)
    }

    pub fn backward(
        &mut self,
        cache: &PoolIndexCache,
        grad_logits: &Tensor,
        grad_tap: Option<&Tensor>,
    ) {
        let (h, w) = cache.hw;
        let g = self.classifier.backward(&cache.dec_out, grad_logits);
        let g = self.dec1b.backward(&cache.dec1b, &g);
        let g = self.dec1a.backward(&cache.dec1a, &g);
        let g = max_unpool2_backward(&g, &cache.idx1);
        let g = self.dec2b.backward(&cache.dec2b, &g);
        let g = self.dec2a.backward(&cache.dec2a, &g);
        let g = max_unpool2_backward(&g, &cache.idx2);
        let g = self.dec3b.backward(&cache.dec3b, &g);
        let mut g_tap = self.dec3a.backward(&cache.dec3a, &g);
        if let Some(gf) = grad_tap {
            g_tap.add_assign(gf).unwrap();
        }
        let g = self.enc3b.backward(&cache.enc3b, &g_tap);
        let g = self.enc3a.backward(&cache.enc3a, &g);
        let g = maxpool2_backward(&g, &cache.idx2, h / 2, w / 2);
        let g = self.enc2b.backward(&cache.enc2b, &g);
        let g = self.enc2a.backward(&cache.enc2a, &g);
        let g = maxpool2_backward(&g, &cache.idx1, h, w);
        let g = self.enc1b.backward(&cache.enc1b, &g);
        let _ = self.enc1a.backward(&cache.enc1a, &g);
    }

    fn units(&self) -> [&ConvBnRelu; 12] {
        [
            &self.enc1a,
            &self.enc1b,
            &self.enc2a,
            &self.enc2b,
            &self.enc3a,
            &self.enc3b,
            &self.dec3a,
            &self.dec3b,
            &self.dec2a,
            &self.dec2b,
            &self.dec1a,
            &self.dec1b,
        ]
    }

    fn units_mut(&mut self) -> [&mut ConvBnRelu; 12] {
        [
            &mut self.enc1a,
            &mut self.enc1b,
            &mut self.enc2a,
            &mut self.enc2b,
            &mut self.enc3a,
            &mut self.enc3b,
            &mut self.dec3a,
            &mut self.dec3b,
            &mut self.dec2a,
            &mut self.dec2b,
            &mut self.dec1a,
            &mut self.dec1b,
        ]
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut ps: Vec<&Param> = Vec::new();
        for u in self.units() {
            ps.extend(u.params());
        }
        ps.push(&self.classifier.w);
        ps.push(self.classifier.b.as_ref().unwrap());
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let PoolIndexNet {
            enc1a,
            enc1b,
            enc2a,
            enc2b,
            enc3a,
            enc3b,
            dec3a,
            dec3b,
            dec2a,
            dec2b,
            dec1a,
            dec1b,
            classifier,
            ..
        } = self;
        let mut ps: Vec<&mut Param> = Vec::new();
        for u in [
            enc1a, enc1b, enc2a, enc2b, enc3a, enc3b, dec3a, dec3b, dec2a, dec2b, dec1a, dec1b,
        ] {
            ps.extend(u.params_mut());
        }
        ps.push(&mut classifier.w);
        ps.push(classifier.b.as_mut().unwrap());
        ps
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        self.units()
            .into_iter()
            .flat_map(|u| {
                let prefix = u.bn.gamma.name.trim_end_matches(".gamma");
                [
                    (alloc::format!("{prefix}.running_mean"), &u.bn.running_mean),
                    (alloc::format!("{prefix}.running_var"), &u.bn.running_var),
                ]
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.units_mut()
            .into_iter()
            .flat_map(|u| {
                let prefix = u.bn.gamma.name.trim_end_matches(".gamma").to_owned();
                [
                    (
                        alloc::format!("{prefix}.running_mean"),
                        &mut u.bn.running_mean,
                    ),
                    (
                        alloc::format!("{prefix}.running_var"),
                        &mut u.bn.running_var,
                    ),
                ]
            })
            .collect()
    }

    pub fn flops_plan(&self, n: usize) -> Vec<PlanOp> {
        let c = self.base as u64;
        let full = (n * n) as u64;
        let half = full / 4;
        let quarter = full / 16;
        let mut plan = Vec::new();
        let cbr = |plan: &mut Vec<PlanOp>, c_in: u64, c_out: u64, area: u64| {
            plan.push(PlanOp::Conv {
                c_in,
                c_out,
                k: 3,
                out_elements: area,
            });
            plan.push(PlanOp::Norm {
                elements: c_out * area,
            });
            plan.push(PlanOp::Activation {
                elements: c_out * area,
            });
        };
        cbr(&mut plan, 3, c, full); // enc1a
        cbr(&mut plan, c, c, full); // enc1b
        plan.push(PlanOp::MaxPool {
            input_elements: c * full,
        });
        cbr(&mut plan, c, 2 * c, half); // enc2a
        cbr(&mut plan, 2 * c, 2 * c, half); // enc2b
        plan.push(PlanOp::MaxPool {
            input_elements: 2 * c * half,
        });
        cbr(&mut plan, 2 * c, 4 * c, quarter); // enc3a
        cbr(&mut plan, 4 * c, 4 * c, quarter); // enc3b (tap)
        cbr(&mut plan, 4 * c, 4 * c, quarter); // dec3a
        cbr(&mut plan, 4 * c, 2 * c, quarter); // dec3b
        plan.push(PlanOp::Unpool);
        cbr(&mut plan, 2 * c, 2 * c, half); // dec2a
        cbr(&mut plan, 2 * c, c, half); // dec2b
        plan.push(PlanOp::Unpool);
        cbr(&mut plan, c, c, full); // dec1a
        cbr(&mut plan, c, c, full); // dec1b
        plan.push(PlanOp::Conv {
            c_in: c,
            c_out: 2,
            k: 1,
            out_elements: full,
        });
        plan
    }
}
