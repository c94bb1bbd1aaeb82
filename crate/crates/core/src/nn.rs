//! Layer primitives with hand-written forward and backward passes.
//!
//! All activations are `f64` NCHW tensors. Backward passes accumulate into
//! the owning `Param::grad` buffers and return the gradient with respect to
//! the layer input, so whole networks chain these calls explicitly. Every
//! op here is deterministic: same inputs, same bits out.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::tensor::Tensor;

/// A named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: String, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { name, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Draws from N(0, 1) via Box-Muller; feeds deterministic weight init and
/// scene noise from any seeded RNG.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: Param,
    pub b: Option<Param>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

/// Output-index bounds such that the sampled input index stays in range:
/// `i = o*stride + tap*dilation - pad` must lie in `[0, extent)`. Returns
/// `(1, 0)` when the range is empty.
fn valid_out_range(
    stride: usize,
    dilation: usize,
    pad: usize,
    tap: usize,
    extent: usize,
    out_extent: usize,
) -> (usize, usize) {
    let s = stride as isize;
    let off = (tap * dilation) as isize - pad as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = (extent as isize - 1 - off) / s;
    let lo = lo.max(0) as usize;
    let hi = hi.min(out_extent as isize - 1);
    if hi < lo as isize {
        (1, 0)
    } else {
        (lo, hi as usize)
    }
}

impl Conv2d {
    /// Kaiming-normal weights (std = sqrt(2 / fan_in)), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (c_in * k * k) as f64;
        let std = libm::sqrt(2.0 / fan_in);
        let mut wdata = vec![0.0; c_out * c_in * k * k];
        for v in wdata.iter_mut() {
            *v = std * standard_normal(rng);
        }
        let w = Param::new(
            format!("{name}.weight"),
            Tensor::from_vec(&[c_out, c_in, k, k], wdata).unwrap(),
        );
        let b = bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Conv2d {
            w,
            b,
            c_in,
            c_out,
            k,
            stride,
            pad,
            dilation,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let eff = self.dilation * (self.k - 1) + 1;
        (
            (h + 2 * self.pad - eff) / self.stride + 1,
            (w + 2 * self.pad - eff) / self.stride + 1,
        )
    }

    #[allow(clippy::needless_range_loop)] // strided gather reads x and writes y by `ow`
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (bsz, c_in, h, w) = x.dims4();
        assert_eq!(c_in, self.c_in, "conv {}: input channels", self.w.name);
        let (ho, wo) = self.out_hw(h, w);
        let mut y = Tensor::zeros(&[bsz, self.c_out, ho, wo]);
        let xd = x.data();
        let wd = self.w.value.data();
        let yd = y.data_mut();
        let (k, s, d, p) = (self.k, self.stride, self.dilation, self.pad as isize);

        for b in 0..bsz {
            for co in 0..self.c_out {
                let y_plane = &mut yd[(b * self.c_out + co) * ho * wo..][..ho * wo];
                if let Some(bias) = &self.b {
                    let bv = bias.value.data()[co];
                    y_plane.iter_mut().for_each(|v| *v = bv);
                }
                for ci in 0..c_in {
                    let x_plane = &xd[(b * c_in + ci) * h * w..][..h * w];
                    let w_base = (co * c_in + ci) * k * k;
                    for kh in 0..k {
                        let (oh_lo, oh_hi) = valid_out_range(s, d, self.pad, kh, h, ho);
                        if oh_lo > oh_hi {
                            continue;
                        }
                        for kw in 0..k {
                            let (ow_lo, ow_hi) = valid_out_range(s, d, self.pad, kw, w, wo);
                            if ow_lo > ow_hi {
                                continue;
                            }
                            let wv = wd[w_base + kh * k + kw];
                            let col_off = (kw * d) as isize - p;
                            for oh in oh_lo..=oh_hi {
                                let ih = (oh * s) as isize + (kh * d) as isize - p;
                                let x_row = &x_plane[ih as usize * w..][..w];
                                let y_row = &mut y_plane[oh * wo..][..wo];
                                if s == 1 {
                                    let xs = &x_row[(ow_lo as isize + col_off) as usize
                                        ..=(ow_hi as isize + col_off) as usize];
                                    for (yv, xv) in y_row[ow_lo..=ow_hi].iter_mut().zip(xs) {
                                        *yv += wv * xv;
                                    }
                                } else {
                                    for ow in ow_lo..=ow_hi {
                                        let iw = (ow * s) as isize + col_off;
                                        y_row[ow] += wv * x_row[iw as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&mut self, x: &Tensor, grad_y: &Tensor) -> Tensor {
        let (bsz, c_in, h, w) = x.dims4();
        let (_, c_out, ho, wo) = grad_y.dims4();
        assert_eq!(c_out, self.c_out);
        let mut grad_x = Tensor::zeros(&[bsz, c_in, h, w]);
        let xd = x.data();
        let gyd = grad_y.data();
        let wd = self.w.value.data();
        let gwd = self.w.grad.data_mut();
        let gxd = grad_x.data_mut();
        let (k, s, d, p) = (self.k, self.stride, self.dilation, self.pad as isize);

        if let Some(bias) = &mut self.b {
            let gbd = bias.grad.data_mut();
            for b in 0..bsz {
                for co in 0..c_out {
                    let gy_plane = &gyd[(b * c_out + co) * ho * wo..][..ho * wo];
                    gbd[co] += gy_plane.iter().sum::<f64>();
                }
            }
        }

        for b in 0..bsz {
            for co in 0..c_out {
                let gy_plane = &gyd[(b * c_out + co) * ho * wo..][..ho * wo];
                for ci in 0..c_in {
                    let x_plane = &xd[(b * c_in + ci) * h * w..][..h * w];
                    let gx_plane = &mut gxd[(b * c_in + ci) * h * w..][..h * w];
                    let w_base = (co * c_in + ci) * k * k;
                    for kh in 0..k {
                        let (oh_lo, oh_hi) = valid_out_range(s, d, self.pad, kh, h, ho);
                        if oh_lo > oh_hi {
                            continue;
                        }
                        for kw in 0..k {
                            let (ow_lo, ow_hi) = valid_out_range(s, d, self.pad, kw, w, wo);
                            if ow_lo > ow_hi {
                                continue;
                            }
                            let wv = wd[w_base + kh * k + kw];
                            let col_off = (kw * d) as isize - p;
                            let mut wgrad = 0.0;
                            for oh in oh_lo..=oh_hi {
                                let ih = (oh * s) as isize + (kh * d) as isize - p;
                                let x_row = &x_plane[ih as usize * w..][..w];
                                let gx_row = &mut gx_plane[ih as usize * w..][..w];
                                let gy_row = &gy_plane[oh * wo..][..wo];
                                if s == 1 {
                                    let lo = (ow_lo as isize + col_off) as usize;
                                    let hi = (ow_hi as isize + col_off) as usize;
                                    let xs = &x_row[lo..=hi];
                                    let gxs = &mut gx_row[lo..=hi];
                                    let gys = &gy_row[ow_lo..=ow_hi];
                                    for ((gx, xv), gy) in gxs.iter_mut().zip(xs).zip(gys) {
                                        *gx += wv * gy;
                                        wgrad += xv * gy;
                                    }
                                } else {
                                    for ow in ow_lo..=ow_hi {
                                        let iw = ((ow * s) as isize + col_off) as usize;
                                        gx_row[iw] += wv * gy_row[ow];
                                        wgrad += x_row[iw] * gy_row[ow];
                                    }
                                }
                            }
                            gwd[w_base + kh * k + kw] += wgrad;
                        }
                    }
                }
            }
        }
        grad_x
    }

    pub fn param_count(&self) -> usize {
        self.w.value.len() + self.b.as_ref().map_or(0, |b| b.value.len())
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    pub c: usize,
}

/// Saved normalized activations for the train-mode backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(name: &str, c: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.gamma"), Tensor::filled(&[c], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[c])),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::filled(&[c], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            c,
        }
    }

    /// Normalizes with batch statistics (biased variance) and updates the
    /// running estimates in place.
    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, BnCache) {
        let (bsz, c, h, w) = x.dims4();
        assert_eq!(c, self.c);
        let plane = h * w;
        let n = (bsz * plane) as f64;
        let xd = x.data();
        let mut y = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; c];
        let gam = self.gamma.value.data();
        let bet = self.beta.value.data();
        {
            let yd = y.data_mut();
            let xh = xhat.data_mut();
            for ci in 0..c {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for b in 0..bsz {
                    let xp = &xd[(b * c + ci) * plane..][..plane];
                    for &v in xp {
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / n;
                let var = (sq / n - mean * mean).max(0.0);
                let istd = 1.0 / libm::sqrt(var + self.eps);
                inv_std[ci] = istd;
                self.running_mean.data_mut()[ci] =
                    (1.0 - self.momentum) * self.running_mean.data()[ci] + self.momentum * mean;
                self.running_var.data_mut()[ci] =
                    (1.0 - self.momentum) * self.running_var.data()[ci] + self.momentum * var;
                let (g, be) = (gam[ci], bet[ci]);
                for b in 0..bsz {
                    let base = (b * c + ci) * plane;
                    let xp = &xd[base..][..plane];
                    let yp = &mut yd[base..][..plane];
                    let hp = &mut xh[base..][..plane];
                    for i in 0..plane {
                        let v = (xp[i] - mean) * istd;
                        hp[i] = v;
                        yp[i] = g * v + be;
                    }
                }
            }
        }
        (y, BnCache { xhat, inv_std })
    }

    /// Normalizes with the stored running statistics; no state mutation.
    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let (bsz, c, h, w) = x.dims4();
        assert_eq!(c, self.c);
        let plane = h * w;
        let xd = x.data();
        let mut y = Tensor::zeros(x.shape());
        let yd = y.data_mut();
        for ci in 0..c {
            let istd = 1.0 / libm::sqrt(self.running_var.data()[ci] + self.eps);
            let mean = self.running_mean.data()[ci];
            let g = self.gamma.value.data()[ci];
            let be = self.beta.value.data()[ci];
            for b in 0..bsz {
                let base = (b * c + ci) * plane;
                let xp = &xd[base..][..plane];
                let yp = &mut yd[base..][..plane];
                for i in 0..plane {
                    yp[i] = g * (xp[i] - mean) * istd + be;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache, grad_y: &Tensor) -> Tensor {
        let (bsz, c, h, w) = grad_y.dims4();
        let plane = h * w;
        let n = (bsz * plane) as f64;
        let gyd = grad_y.data();
        let xh = cache.xhat.data();
        let mut grad_x = Tensor::zeros(grad_y.shape());
        let gxd = grad_x.data_mut();
        let gam = self.gamma.value.data();
        let ggam = self.gamma.grad.data_mut();
        let gbet = self.beta.grad.data_mut();
        for ci in 0..c {
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for b in 0..bsz {
                let base = (b * c + ci) * plane;
                let gyp = &gyd[base..][..plane];
                let xhp = &xh[base..][..plane];
                for i in 0..plane {
                    sum_gy += gyp[i];
                    sum_gy_xhat += gyp[i] * xhp[i];
                }
            }
            ggam[ci] += sum_gy_xhat;
            gbet[ci] += sum_gy;
            let scale = gam[ci] * cache.inv_std[ci];
            let mean_gy = sum_gy / n;
            let mean_gy_xhat = sum_gy_xhat / n;
            for b in 0..bsz {
                let base = (b * c + ci) * plane;
                let gyp = &gyd[base..][..plane];
                let xhp = &xh[base..][..plane];
                let gxp = &mut gxd[base..][..plane];
                for i in 0..plane {
                    gxp[i] = scale * (gyp[i] - mean_gy - xhp[i] * mean_gy_xhat);
                }
            }
        }
        grad_x
    }
}

// ---------------------------------------------------------------------------
// Activations and spatial ops
// ---------------------------------------------------------------------------

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
    y
}

/// ReLU gradient from the forward output (`y > 0` iff `x > 0`).
pub fn relu_backward(y: &Tensor, grad_y: &Tensor) -> Tensor {
    let mut gx = grad_y.clone();
    for (g, &v) in gx.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

/// 2x2/stride-2 max pooling. Returned indices hold, per output element, the
/// flat `ih * w + iw` offset of the winner within its input plane; ties go to
/// the first (row-major) element.
pub fn maxpool2_forward(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (bsz, c, h, w) = x.dims4();
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even spatial dims");
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[bsz, c, ho, wo]);
    let mut idx = vec![0u32; bsz * c * ho * wo];
    let xd = x.data();
    let yd = y.data_mut();
    for bc in 0..bsz * c {
        let xp = &xd[bc * h * w..][..h * w];
        let yp = &mut yd[bc * ho * wo..][..ho * wo];
        let ip = &mut idx[bc * ho * wo..][..ho * wo];
        for oh in 0..ho {
            for ow in 0..wo {
                let (ih, iw) = (oh * 2, ow * 2);
                let mut best = xp[ih * w + iw];
                let mut best_at = (ih * w + iw) as u32;
                for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                    let at = (ih + dh) * w + iw + dw;
                    if xp[at] > best {
                        best = xp[at];
                        best_at = at as u32;
                    }
                }
                yp[oh * wo + ow] = best;
                ip[oh * wo + ow] = best_at;
            }
        }
    }
    (y, idx)
}

pub fn maxpool2_backward(grad_y: &Tensor, idx: &[u32], in_h: usize, in_w: usize) -> Tensor {
    let (bsz, c, ho, wo) = grad_y.dims4();
    let mut gx = Tensor::zeros(&[bsz, c, in_h, in_w]);
    let gyd = grad_y.data();
    let gxd = gx.data_mut();
    for bc in 0..bsz * c {
        let gyp = &gyd[bc * ho * wo..][..ho * wo];
        let ip = &idx[bc * ho * wo..][..ho * wo];
        let gxp = &mut gxd[bc * in_h * in_w..][..in_h * in_w];
        for i in 0..ho * wo {
            gxp[ip[i] as usize] += gyp[i];
        }
    }
    gx
}

/// Scatters `x` into a 2x-larger plane at the positions recorded by the
/// paired max-pool; everything else stays zero.
pub fn max_unpool2_forward(x: &Tensor, idx: &[u32], out_h: usize, out_w: usize) -> Tensor {
    let (bsz, c, h, w) = x.dims4();
    assert_eq!(out_h, h * 2);
    assert_eq!(out_w, w * 2);
    let mut y = Tensor::zeros(&[bsz, c, out_h, out_w]);
    let xd = x.data();
    let yd = y.data_mut();
    for bc in 0..bsz * c {
        let xp = &xd[bc * h * w..][..h * w];
        let ip = &idx[bc * h * w..][..h * w];
        let yp = &mut yd[bc * out_h * out_w..][..out_h * out_w];
        for i in 0..h * w {
            yp[ip[i] as usize] = xp[i];
        }
    }
    y
}

pub fn max_unpool2_backward(grad_y: &Tensor, idx: &[u32]) -> Tensor {
    let (bsz, c, oh, ow) = grad_y.dims4();
    let (h, w) = (oh / 2, ow / 2);
    let mut gx = Tensor::zeros(&[bsz, c, h, w]);
    let gyd = grad_y.data();
    let gxd = gx.data_mut();
    for bc in 0..bsz * c {
        let gyp = &gyd[bc * oh * ow..][..oh * ow];
        let ip = &idx[bc * h * w..][..h * w];
        let gxp = &mut gxd[bc * h * w..][..h * w];
        for i in 0..h * w {
            gxp[i] = gyp[ip[i] as usize];
        }
    }
    gx
}

/// Per-axis source index/weight pairs for bilinear resampling
/// (half-pixel-centres convention, edges clamped).
fn bilinear_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            if src <= 0.0 {
                (0, 0, 0.0)
            } else {
                let i0 = libm::floor(src) as usize;
                let i0 = i0.min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, src - i0 as f64)
            }
        })
        .collect()
}

pub fn upsample_bilinear_forward(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (bsz, c, h, w) = x.dims4();
    let rows = bilinear_taps(out_h, h);
    let cols = bilinear_taps(out_w, w);
    let mut y = Tensor::zeros(&[bsz, c, out_h, out_w]);
    let xd = x.data();
    let yd = y.data_mut();
    for bc in 0..bsz * c {
        let xp = &xd[bc * h * w..][..h * w];
        let yp = &mut yd[bc * out_h * out_w..][..out_h * out_w];
        for (oh, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (ow, &(c0, c1, fc)) in cols.iter().enumerate() {
                let v00 = xp[r0 * w + c0];
                let v01 = xp[r0 * w + c1];
                let v10 = xp[r1 * w + c0];
                let v11 = xp[r1 * w + c1];
                let top = v00 + fc * (v01 - v00);
                let bot = v10 + fc * (v11 - v10);
                yp[oh * out_w + ow] = top + fr * (bot - top);
            }
        }
    }
    y
}

pub fn upsample_bilinear_backward(grad_y: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let (bsz, c, oh, ow) = grad_y.dims4();
    let rows = bilinear_taps(oh, in_h);
    let cols = bilinear_taps(ow, in_w);
    let mut gx = Tensor::zeros(&[bsz, c, in_h, in_w]);
    let gyd = grad_y.data();
    let gxd = gx.data_mut();
    for bc in 0..bsz * c {
        let gyp = &gyd[bc * oh * ow..][..oh * ow];
        let gxp = &mut gxd[bc * in_h * in_w..][..in_h * in_w];
        for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (cc, &(c0, c1, fc)) in cols.iter().enumerate() {
                let g = gyp[r * ow + cc];
                gxp[r0 * in_w + c0] += g * (1.0 - fr) * (1.0 - fc);
                gxp[r0 * in_w + c1] += g * (1.0 - fr) * fc;
                gxp[r1 * in_w + c0] += g * fr * (1.0 - fc);
                gxp[r1 * in_w + c1] += g * fr * fc;
            }
        }
    }
    gx
}

/// Spatial mean per (batch, channel); output shape `(B, C, 1, 1)`.
pub fn global_avg_pool_forward(x: &Tensor) -> Tensor {
    let (bsz, c, h, w) = x.dims4();
    let plane = (h * w) as f64;
    let mut y = Tensor::zeros(&[bsz, c, 1, 1]);
    let xd = x.data();
    let yd = y.data_mut();
    for bc in 0..bsz * c {
        yd[bc] = xd[bc * h * w..][..h * w].iter().sum::<f64>() / plane;
    }
    y
}

pub fn global_avg_pool_backward(grad_y: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let (bsz, c, _, _) = grad_y.dims4();
    let plane = in_h * in_w;
    let mut gx = Tensor::zeros(&[bsz, c, in_h, in_w]);
    let gyd = grad_y.data();
    let gxd = gx.data_mut();
    for bc in 0..bsz * c {
        let g = gyd[bc] / plane as f64;
        gxd[bc * plane..][..plane].iter_mut().for_each(|v| *v = g);
    }
    gx
}

/// Repeats a `(B, C, 1, 1)` tensor over an `h x w` grid.
pub fn broadcast_spatial_forward(x: &Tensor, h: usize, w: usize) -> Tensor {
    let (bsz, c, xh, xw) = x.dims4();
    assert!(xh == 1 && xw == 1);
    let mut y = Tensor::zeros(&[bsz, c, h, w]);
    let xd = x.data();
    let yd = y.data_mut();
    for bc in 0..bsz * c {
        let v = xd[bc];
        yd[bc * h * w..][..h * w].iter_mut().for_each(|o| *o = v);
    }
    y
}

pub fn broadcast_spatial_backward(grad_y: &Tensor) -> Tensor {
    let (bsz, c, h, w) = grad_y.dims4();
    let mut gx = Tensor::zeros(&[bsz, c, 1, 1]);
    let gyd = grad_y.data();
    let gxd = gx.data_mut();
    for bc in 0..bsz * c {
        gxd[bc] = gyd[bc * h * w..][..h * w].iter().sum();
    }
    gx
}

pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let (bsz, _, h, w) = parts[0].dims4();
    let c_total: usize = parts.iter().map(|p| p.dims4().1).sum();
    let mut y = Tensor::zeros(&[bsz, c_total, h, w]);
    let plane = h * w;
    let yd = y.data_mut();
    for b in 0..bsz {
        let mut c_at = 0;
        for p in parts {
            let (_, pc, ph, pw) = p.dims4();
            assert!(ph == h && pw == w, "concat_channels spatial mismatch");
            let src = &p.data()[b * pc * plane..][..pc * plane];
            yd[(b * c_total + c_at) * plane..][..pc * plane].copy_from_slice(src);
            c_at += pc;
        }
    }
    y
}

pub fn split_channels(grad: &Tensor, sizes: &[usize]) -> Vec<Tensor> {
    let (bsz, c_total, h, w) = grad.dims4();
    assert_eq!(sizes.iter().sum::<usize>(), c_total);
    let plane = h * w;
    let gd = grad.data();
    let mut out: Vec<Tensor> = sizes
        .iter()
        .map(|&c| Tensor::zeros(&[bsz, c, h, w]))
        .collect();
    for b in 0..bsz {
        let mut c_at = 0;
        for (part, &c) in out.iter_mut().zip(sizes) {
            let dst = &mut part.data_mut()[b * c * plane..][..c * plane];
            dst.copy_from_slice(&gd[(b * c_total + c_at) * plane..][..c * plane]);
            c_at += c;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Conv + BN + ReLU composite
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

#[derive(Clone, Debug)]
pub struct CbrCache {
    x: Tensor,
    bn: BnCache,
    y: Tensor,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        // BN immediately re-centres, so the conv carries no bias.
        ConvBnRelu {
            conv: Conv2d::new(
                &format!("{name}.conv"),
                c_in,
                c_out,
                k,
                stride,
                pad,
                dilation,
                false,
                rng,
            ),
            bn: BatchNorm2d::new(&format!("{name}.bn"), c_out),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, CbrCache) {
        let z = self.conv.forward(x);
        let (zn, bn_cache) = self.bn.forward_train(&z);
        let y = relu_forward(&zn);
        let cache = CbrCache {
            x: x.clone(),
            bn: bn_cache,
            y: y.clone(),
        };
        (y, cache)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        relu_forward(&self.bn.forward_eval(&self.conv.forward(x)))
    }

    pub fn backward(&mut self, cache: &CbrCache, grad_y: &Tensor) -> Tensor {
        let g = relu_backward(&cache.y, grad_y);
        let g = self.bn.backward(&cache.bn, &g);
        self.conv.backward(&cache.x, &g)
    }

    pub fn params(&self) -> [&Param; 3] {
        [&self.conv.w, &self.bn.gamma, &self.bn.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 3] {
        [&mut self.conv.w, &mut self.bn.gamma, &mut self.bn.beta]
    }
}
