//! Dilated-pyramid family: strided-conv backbone, parallel dilated branches
//! over the feature tap, bilinear-upsampling decoder. The deep variant adds
//! two residual-free conv blocks per backbone stage; the shallow variant has
//! none, which is what makes the student lighter than teacher #1.

use alloc::borrow::ToOwned;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::flops::PlanOp;
use crate::model::spec::{BackboneDepth, ModelSpec};
use crate::nn::{
    broadcast_spatial_backward, broadcast_spatial_forward, concat_channels,
    global_avg_pool_backward, global_avg_pool_forward, relu_backward, relu_forward, split_channels,
    upsample_bilinear_backward, upsample_bilinear_forward, CbrCache, Conv2d, ConvBnRelu, Param,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DilatedNet {
    stem: ConvBnRelu,
    down1: ConvBnRelu,
    blocks1: Vec<ConvBnRelu>,
    down2: ConvBnRelu,
    blocks2: Vec<ConvBnRelu>,
    branch_1x1: ConvBnRelu,
    branch_d2: ConvBnRelu,
    branch_d4: ConvBnRelu,
    gap_conv: Conv2d,
    merge: ConvBnRelu,
    dec: ConvBnRelu,
    classifier: Conv2d,
    base: usize,
}

#[derive(Clone, Debug)]
pub struct DilatedCache {
    stem: CbrCache,
    down1: CbrCache,
    blocks1: Vec<CbrCache>,
    down2: CbrCache,
    blocks2: Vec<CbrCache>,
    b0: CbrCache,
    b1: CbrCache,
    b2: CbrCache,
    gap_in: Tensor,
    gap_act: Tensor,
    merge: CbrCache,
    dec: CbrCache,
    dec_out: Tensor,
    tap_hw: (usize, usize),
}

impl DilatedNet {
    pub fn new<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Self {
        let c = spec.base_channels;
        let n_blocks = match spec.backbone_depth {
            BackboneDepth::Deep => 2,
            BackboneDepth::Shallow => 0,
        };
        let blocks1 = (0..n_blocks)
            .map(|i| {
                ConvBnRelu::new(
                    &alloc::format!("blocks1.{i}"),
                    2 * c,
                    2 * c,
                    3,
                    1,
                    1,
                    1,
                    rng,
                )
            })
            .collect();
        let blocks2 = (0..n_blocks)
            .map(|i| {
                ConvBnRelu::new(
                    &alloc::format!("blocks2.{i}"),
                    4 * c,
                    4 * c,
                    3,
                    1,
                    1,
                    1,
                    rng,
                )
            })
            .collect();
        DilatedNet {
            stem: ConvBnRelu::new("stem", 3, c, 3, 1, 1, 1, rng),
            down1: ConvBnRelu::new("down1", c, 2 * c, 3, 2, 1, 1, rng),
            blocks1,
            down2: ConvBnRelu::new("down2", 2 * c, 4 * c, 3, 2, 1, 1, rng),
            blocks2,
            branch_1x1: ConvBnRelu::new("pyramid.b0", 4 * c, c, 1, 1, 0, 1, rng),
            branch_d2: ConvBnRelu::new("pyramid.b1", 4 * c, c, 3, 1, 2, 2, rng),
            branch_d4: ConvBnRelu::new("pyramid.b2", 4 * c, c, 3, 1, 4, 4, rng),
            gap_conv: Conv2d::new("pyramid.gap", 4 * c, c, 1, 1, 0, 1, true, rng),
            merge: ConvBnRelu::new("pyramid.merge", 4 * c, 2 * c, 1, 1, 0, 1, rng),
            dec: ConvBnRelu::new("decoder", 2 * c, c, 3, 1, 1, 1, rng),
            classifier: Conv2d::new("classifier", c, spec.n_classes, 1, 1, 0, 1, true, rng),
            base: c,
        }
    }

    /// Train-mode forward; returns (feature tap, logits, cache).
    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, Tensor, DilatedCache) {
        let (_, _, h, w) = x.dims4();
        let (s, c_stem) = self.stem.forward_train(x);
        let (mut z, c_down1) = self.down1.forward_train(&s);
        let mut c_blocks1 = Vec::with_capacity(self.blocks1.len());
        for b in self.blocks1.iter_mut() {
            let (zz, cc) = b.forward_train(&z);
            z = zz;
            c_blocks1.push(cc);
        }
        let (mut t, c_down2) = self.down2.forward_train(&z);
        let mut c_blocks2 = Vec::with_capacity(self.blocks2.len());
        for b in self.blocks2.iter_mut() {
            let (tt, cc) = b.forward_train(&t);
            t = tt;
            c_blocks2.push(cc);
        }
        let tap = t;
        let (th, tw) = (tap.shape()[2], tap.shape()[3]);

        let (b0, c_b0) = self.branch_1x1.forward_train(&tap);
        let (b1, c_b1) = self.branch_d2.forward_train(&tap);
        let (b2, c_b2) = self.branch_d4.forward_train(&tap);
        let gap_in = global_avg_pool_forward(&tap);
        let gap_act = relu_forward(&self.gap_conv.forward(&gap_in));
        let b3 = broadcast_spatial_forward(&gap_act, th, tw);

        let cat = concat_channels(&[&b0, &b1, &b2, &b3]);
        let (m, c_merge) = self.merge.forward_train(&cat);
        let up = upsample_bilinear_forward(&m, h, w);
        let (d, c_dec) = self.dec.forward_train(&up);
        let logits = self.classifier.forward(&d);

        let cache = DilatedCache {
            stem: c_stem,
            down1: c_down1,
            blocks1: c_blocks1,
            down2: c_down2,
            blocks2: c_blocks2,
            b0: c_b0,
            b1: c_b1,
            b2: c_b2,
            gap_in,
            gap_act,
            merge: c_merge,
            dec: c_dec,
            dec_out: d,
            tap_hw: (th, tw),
        };
        (tap, logits, cache)
    }

    pub fn forward_eval(&self, x: &Tensor) -> (Tensor, Tensor) {
        let (_, _, h, w) = x.dims4();
        let s = self.stem.forward_eval(x);
        let mut z = self.down1.forward_eval(&s);
        for b in &self.blocks1 {
            z = b.forward_eval(&z);
        }
        let mut tap = self.down2.forward_eval(&z);
        for b in &self.blocks2 {
            tap = b.forward_eval(&tap);
        }
        let (th, tw) = (tap.shape()[2], tap.shape()[3]);
        let b0 = self.branch_1x1.forward_eval(&tap);
        let b1 = self.branch_d2.forward_eval(&tap);
        let b2 = self.branch_d4.forward_eval(&tap);
        let gap_act = relu_forward(&self.gap_conv.forward(&global_avg_pool_forward(&tap)));
        let b3 = broadcast_spatial_forward(&gap_act, th, tw);
        let cat = concat_channels(&[&b0, &b1, &b2, &b3]);
        let m = self.merge.forward_eval(&cat);
        let up = upsample_bilinear_forward(&m, h, w);
        let d = self.dec.forward_eval(&up);
        let logits = self.classifier.forward(&d);
        (tap, logits)
    }

    /// Backward from logits (and optionally from the feature tap, for
    /// feature-level distillation). Accumulates parameter gradients and
    /// discards the input-image gradient.
    pub fn backward(
        &mut self,
        cache: &DilatedCache,
        grad_logits: &Tensor,
        grad_tap: Option<&Tensor>,
    ) {
        let c = self.base;
        let (th, tw) = cache.tap_hw;

        let g = self.classifier.backward(&cache.dec_out, grad_logits);
        let g = self.dec.backward(&cache.dec, &g);
        let g = upsample_bilinear_backward(&g, th, tw);
        let g = self.merge.backward(&cache.merge, &g);
        let parts = split_channels(&g, &[c, c, c, c]);

        let mut g_tap = self.branch_1x1.backward(&cache.b0, &parts[0]);
        g_tap
            .add_assign(&self.branch_d2.backward(&cache.b1, &parts[1]))
            .unwrap();
        g_tap
            .add_assign(&self.branch_d4.backward(&cache.b2, &parts[2]))
            .unwrap();
        let g3 = broadcast_spatial_backward(&parts[3]);
        let g3 = relu_backward(&cache.gap_act, &g3);
        let g3 = self.gap_conv.backward(&cache.gap_in, &g3);
        g_tap
            .add_assign(&global_avg_pool_backward(&g3, th, tw))
            .unwrap();

        if let Some(gf) = grad_tap {
            g_tap.add_assign(gf).unwrap();
        }

        let mut g = g_tap;
        for (b, cc) in self.blocks2.iter_mut().zip(cache.blocks2.iter()).rev() {
            g = b.backward(cc, &g);
        }
        g = self.down2.backward(&cache.down2, &g);
        for (b, cc) in self.blocks1.iter_mut().zip(cache.blocks1.iter()).rev() {
            g = b.backward(cc, &g);
        }
        g = self.down1.backward(&cache.down1, &g);
        let _ = self.stem.backward(&cache.stem, &g);
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut ps: Vec<&Param> = Vec::new();
        for unit in self.units() {
            ps.extend(unit.params());
        }
        ps.push(&self.gap_conv.w);
        ps.push(self.gap_conv.b.as_ref().unwrap());
        ps.push(&self.classifier.w);
        ps.push(self.classifier.b.as_ref().unwrap());
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps: Vec<&mut Param> = Vec::new();
        let DilatedNet {
            stem,
            down1,
            blocks1,
            down2,
            blocks2,
            branch_1x1,
            branch_d2,
            branch_d4,
            gap_conv,
            merge,
            dec,
            classifier,
            ..
        } = self;
        for unit in [stem, down1]
            .into_iter()
            .chain(blocks1.iter_mut())
            .chain([down2])
            .chain(blocks2.iter_mut())
            .chain([branch_1x1, branch_d2, branch_d4, merge, dec])
        {
            ps.extend(unit.params_mut());
        }
        ps.push(&mut gap_conv.w);
        ps.push(gap_conv.b.as_mut().unwrap());
        ps.push(&mut classifier.w);
        ps.push(classifier.b.as_mut().unwrap());
        ps
    }

    fn units(&self) -> Vec<&ConvBnRelu> {
        let mut us: Vec<&ConvBnRelu> = Vec::new();
        us.push(&self.stem);
        us.push(&self.down1);
        us.extend(self.blocks1.iter());
        us.push(&self.down2);
        us.extend(self.blocks2.iter());
        us.push(&self.branch_1x1);
        us.push(&self.branch_d2);
        us.push(&self.branch_d4);
        us.push(&self.merge);
        us.push(&self.dec);
        us
    }

    /// Running-statistic buffers, in the same traversal order as `params`.
    pub fn buffers(&self) -> Vec<(alloc::string::String, &Tensor)> {
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

    pub fn buffers_mut(&mut self) -> Vec<(alloc::string::String, &mut Tensor)> {
        let DilatedNet {
            stem,
            down1,
            blocks1,
            down2,
            blocks2,
            branch_1x1,
            branch_d2,
            branch_d4,
            merge,
            dec,
            ..
        } = self;
        let units: Vec<&mut ConvBnRelu> = [stem, down1]
            .into_iter()
            .chain(blocks1.iter_mut())
            .chain([down2])
            .chain(blocks2.iter_mut())
            .chain([branch_1x1, branch_d2, branch_d4, merge, dec])
            .collect();
        units
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

    /// FLOP-counting plan for an `n x n` input, mirroring the forward pass.
    pub fn flops_plan(&self, n: usize) -> Vec<PlanOp> {
        let c = self.base as u64;
        let full = (n * n) as u64;
        let half = full / 4;
        let quarter = full / 16;
        let mut plan = Vec::new();
        let cbr = |plan: &mut Vec<PlanOp>, c_in: u64, c_out: u64, k: u64, area: u64| {
            plan.push(PlanOp::Conv {
                c_in,
                c_out,
                k,
                out_elements: area,
            });
            plan.push(PlanOp::Norm {
                elements: c_out * area,
            });
            plan.push(PlanOp::Activation {
                elements: c_out * area,
            });
        };
        cbr(&mut plan, 3, c, 3, full); // stem
        cbr(&mut plan, c, 2 * c, 3, half); // down1
        for _ in &self.blocks1 {
            cbr(&mut plan, 2 * c, 2 * c, 3, half);
        }
        cbr(&mut plan, 2 * c, 4 * c, 3, quarter); // down2
        for _ in &self.blocks2 {
            cbr(&mut plan, 4 * c, 4 * c, 3, quarter);
        }
        cbr(&mut plan, 4 * c, c, 1, quarter); // b0
        cbr(&mut plan, 4 * c, c, 3, quarter); // b1 (dilation does not change cost)
        cbr(&mut plan, 4 * c, c, 3, quarter); // b2
        plan.push(PlanOp::GlobalPool {
            input_elements: 4 * c * quarter,
        });
        plan.push(PlanOp::Conv {
            c_in: 4 * c,
            c_out: c,
            k: 1,
            out_elements: 1,
        });
        plan.push(PlanOp::Activation { elements: c });
        cbr(&mut plan, 4 * c, 2 * c, 1, quarter); // merge
        plan.push(PlanOp::Upsample {
            output_elements: 2 * c * full,
        });
        cbr(&mut plan, 2 * c, c, 3, full); // decoder
        plan.push(PlanOp::Conv {
            c_in: c,
            c_out: 2,
            k: 1,
            out_elements: full,
        });
        plan
    }
}
