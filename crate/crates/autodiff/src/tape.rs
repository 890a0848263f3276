//! Reverse-mode tape over dense tensors.
//!
//! Operations are executed eagerly while recording their dependencies; a
//! later [`Tape::backward`] pass walks the nodes in reverse creation order
//! and accumulates gradients. One tape serves one forward/backward cycle:
//! calling `backward` a second time without rebuilding is an error.

use rayon::prelude::*;
use tomo_core::geometry::ParallelGeometry;
use tomo_core::operator::{back_project_into, forward_project_into};
use tomo_core::variational::{tv_smooth_value_grad, Discrepancy};

use crate::error::{AdError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

enum Op {
    Leaf,
    Conv2d { input: ValueId, kernel: ValueId, bias: ValueId, stride: usize, pad: usize },
    ChannelAffine { input: ValueId, scale: ValueId, shift: ValueId },
    LeakyRelu { input: ValueId, slope: f64 },
    Sigmoid { input: ValueId },
    UpsampleBilinear2x { input: ValueId },
    Concat { a: ValueId, b: ValueId },
    Radon { input: ValueId, geom: Box<ParallelGeometry> },
    Discrepancy { pred: ValueId, observed: Vec<f64>, disc: Discrepancy },
    TvSmooth { input: ValueId, eps: f64 },
    AddScaled { a: ValueId, b: ValueId, coeff: f64 },
    WeightedSum { input: ValueId, weights: Vec<f64> },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    backward_spent: bool,
    nan_checks: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_spent: false, nan_checks: false }
    }

    /// Assert after every op that all produced entries are finite.
    pub fn with_nan_checks(mut self) -> Self {
        self.nan_checks = true;
        self
    }

    /// Drop all recorded nodes so the tape can host a fresh forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_spent = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<ValueId> {
        if self.nan_checks && !value.all_finite() {
            return Err(AdError::NonFinite("tape op output".into()));
        }
        self.nodes.push(Node { value, grad: None, op });
        Ok(ValueId(self.nodes.len() - 1))
    }

    /// Insert a leaf (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.nodes.push(Node { value, grad: None, op: Op::Leaf });
        ValueId(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        let (ic, h, w) = x.chw_dims()?;
        let (oc, kic, kh, kw) = k.kernel_dims()?;
        if kic != ic {
            return Err(AdError::Shape(format!(
                "conv2d: kernel expects {kic} input channels, tensor has {ic}"
            )));
        }
        if b.len() != oc {
            return Err(AdError::Shape(format!(
                "conv2d: bias has {} entries for {oc} output channels",
                b.len()
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(AdError::Shape("conv2d: kernel larger than padded input".into()));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(vec![oc, oh, ow]);
        conv2d_forward(
            &x.data, ic, h, w, &k.data, oc, kh, kw, &b.data, stride, pad, &mut out.data, oh, ow,
        );
        self.push(out, Op::Conv2d { input, kernel, bias, stride, pad })
    }

    /// Per-channel affine `x * scale[c] + shift[c]`.
    pub fn channel_affine(
        &mut self,
        input: ValueId,
        scale: ValueId,
        shift: ValueId,
    ) -> Result<ValueId> {
        let x = self.value(input);
        let (c, h, w) = x.chw_dims()?;
        if self.value(scale).len() != c || self.value(shift).len() != c {
            return Err(AdError::Shape("channel_affine: parameter length != channels".into()));
        }
        let plane = h * w;
        let mut out = Tensor::zeros(vec![c, h, w]);
        for ch in 0..c {
            let s = self.value(scale).data[ch];
            let t = self.value(shift).data[ch];
            let src = &self.value(input).data[ch * plane..(ch + 1) * plane];
            for (o, &v) in out.data[ch * plane..(ch + 1) * plane].iter_mut().zip(src) {
                *o = v * s + t;
            }
        }
        self.push(out, Op::ChannelAffine { input, scale, shift })
    }

    pub fn leaky_relu(&mut self, input: ValueId, slope: f64) -> Result<ValueId> {
        let x = self.value(input);
        let out = Tensor {
            dims: x.dims.clone(),
            data: x.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect(),
        };
        self.push(out, Op::LeakyRelu { input, slope })
    }

    pub fn sigmoid(&mut self, input: ValueId) -> Result<ValueId> {
        let x = self.value(input);
        let out = Tensor {
            dims: x.dims.clone(),
            data: x.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        };
        self.push(out, Op::Sigmoid { input })
    }

    /// Bilinear 2x upsampling with half-pixel alignment.
    pub fn upsample_bilinear_2x(&mut self, input: ValueId) -> Result<ValueId> {
        let x = self.value(input);
        let (c, h, w) = x.chw_dims()?;
        let (oh, ow) = (2 * h, 2 * w);
        let ytaps = bilinear_taps(h);
        let xtaps = bilinear_taps(w);
        let mut out = Tensor::zeros(vec![c, oh, ow]);
        let plane = h * w;
        let oplane = oh * ow;
        out.data
            .par_chunks_mut(oplane)
            .zip(x.data.par_chunks(plane))
            .for_each(|(oplane_data, iplane)| {
                for oy in 0..oh {
                    let (y0, y1, fy) = ytaps[oy];
                    for ox in 0..ow {
                        let (x0, x1, fx) = xtaps[ox];
                        let v00 = iplane[y0 * w + x0];
                        let v01 = iplane[y0 * w + x1];
                        let v10 = iplane[y1 * w + x0];
                        let v11 = iplane[y1 * w + x1];
                        oplane_data[oy * ow + ox] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                            + fy * ((1.0 - fx) * v10 + fx * v11);
                    }
                }
            });
        self.push(out, Op::UpsampleBilinear2x { input })
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        let tb = self.value(b);
        let (ca, ha, wa) = ta.chw_dims()?;
        let (cb, hb, wb) = tb.chw_dims()?;
        if ha != hb || wa != wb {
            return Err(AdError::Shape(format!(
                "concat: spatial dims differ ({ha}x{wa} vs {hb}x{wb})"
            )));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(&ta.data);
        data.extend_from_slice(&tb.data);
        let out = Tensor { dims: vec![ca + cb, ha, wa], data };
        self.push(out, Op::Concat { a, b })
    }

    /// Forward projection of a single-channel image; the backward pass is
    /// the exact adjoint.
    pub fn radon(&mut self, input: ValueId, geom: &ParallelGeometry) -> Result<ValueId> {
        let x = self.value(input);
        let (c, h, w) = x.chw_dims()?;
        if c != 1 || h != geom.image_size || w != geom.image_size {
            return Err(AdError::Shape(format!(
                "radon: expected (1, {0}, {0}) input, got {1:?}",
                geom.image_size, x.dims
            )));
        }
        let mut out = Tensor::zeros(vec![1, geom.n_angles, geom.n_detectors]);
        forward_project_into(&x.data, w, h, geom, &mut out.data);
        self.push(out, Op::Radon { input, geom: Box::new(geom.clone()) })
    }

    /// Scalar data-discrepancy `S(pred, observed)` for a fixed observation.
    pub fn discrepancy(
        &mut self,
        pred: ValueId,
        observed: &[f64],
        disc: Discrepancy,
    ) -> Result<ValueId> {
        let p = self.value(pred);
        if p.len() != observed.len() {
            return Err(AdError::Shape(format!(
                "discrepancy: prediction has {} entries, observation {}",
                p.len(),
                observed.len()
            )));
        }
        let value: f64 = p
            .data
            .iter()
            .zip(observed)
            .map(|(&a, &b)| disc.bin_value_grad(a, b).0)
            .sum();
        self.push(
            Tensor::scalar(value),
            Op::Discrepancy { pred, observed: observed.to_vec(), disc },
        )
    }

    /// Scalar smoothed isotropic TV of a single-channel image.
    pub fn tv_smooth(&mut self, input: ValueId, eps: f64) -> Result<ValueId> {
        let x = self.value(input);
        let (c, h, w) = x.chw_dims()?;
        if c != 1 {
            return Err(AdError::Shape("tv_smooth expects a single-channel image".into()));
        }
        let (value, _) = tv_smooth_value_grad(&x.data, w, h, eps);
        self.push(Tensor::scalar(value), Op::TvSmooth { input, eps })
    }

    /// Scalar combination `a + coeff * b`.
    pub fn add_scaled(&mut self, a: ValueId, b: ValueId, coeff: f64) -> Result<ValueId> {
        if !self.value(a).is_scalar() || !self.value(b).is_scalar() {
            return Err(AdError::Shape("add_scaled expects scalars".into()));
        }
        let v = self.value(a).data[0] + coeff * self.value(b).data[0];
        self.push(Tensor::scalar(v), Op::AddScaled { a, b, coeff })
    }

    /// Scalar `sum_i weights[i] * input[i]`; the generic reduction used by
    /// the gradient checks.
    pub fn weighted_sum(&mut self, input: ValueId, weights: &[f64]) -> Result<ValueId> {
        let x = self.value(input);
        if x.len() != weights.len() {
            return Err(AdError::Shape("weighted_sum: length mismatch".into()));
        }
        let v: f64 = x.data.iter().zip(weights).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(v), Op::WeightedSum { input, weights: weights.to_vec() })
    }

    /// Reverse pass from a scalar loss; populates gradients of every node
    /// that the loss depends on.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.nodes.is_empty() || self.backward_spent {
            return Err(AdError::BackwardWithoutForward);
        }
        if !self.value(loss).is_scalar() {
            return Err(AdError::Shape("backward requires a scalar loss".into()));
        }
        self.backward_spent = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue; // leaves keep their accumulated gradient
            }
            let grad = self.nodes[idx].grad.take().unwrap();
            // Contributions to parent gradients, computed against immutable
            // borrows, then accumulated.
            let contributions = self.node_backward(idx, &grad);
            for (target, contrib) in contributions {
                let node = &mut self.nodes[target];
                match &mut node.grad {
                    Some(g) => {
                        for (gi, ci) in g.iter_mut().zip(&contrib) {
                            *gi += ci;
                        }
                    }
                    None => node.grad = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `idx` to its parents, given the
    /// gradient `grad` flowing into its output.
    fn node_backward(&self, idx: usize, grad: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, kernel, bias, stride, pad } => {
                let x = &self.nodes[input.0].value;
                let k = &self.nodes[kernel.0].value;
                let (ic, h, w) = x.chw_dims().unwrap();
                let (oc, _, kh, kw) = k.kernel_dims().unwrap();
                let (oh, ow) = (node.value.dims[1], node.value.dims[2]);
                let mut gx = vec![0.0; x.len()];
                let mut gk = vec![0.0; k.len()];
                let mut gb = vec![0.0; oc];
                conv2d_backward(
                    &x.data, ic, h, w, &k.data, oc, kh, kw, *stride, *pad, grad, oh, ow, &mut gx,
                    &mut gk, &mut gb,
                );
                vec![(input.0, gx), (kernel.0, gk), (bias.0, gb)]
            }
            Op::ChannelAffine { input, scale, shift } => {
                let x = &self.nodes[input.0].value;
                let sc = &self.nodes[scale.0].value.data;
                let (c, h, w) = x.chw_dims().unwrap();
                let plane = h * w;
                let mut gx = vec![0.0; x.len()];
                let mut gs = vec![0.0; c];
                let mut gt = vec![0.0; c];
                for ch in 0..c {
                    let g = &grad[ch * plane..(ch + 1) * plane];
                    let xv = &x.data[ch * plane..(ch + 1) * plane];
                    let gxc = &mut gx[ch * plane..(ch + 1) * plane];
                    let mut ds = 0.0;
                    let mut dt = 0.0;
                    for i in 0..plane {
                        gxc[i] = g[i] * sc[ch];
                        ds += g[i] * xv[i];
                        dt += g[i];
                    }
                    gs[ch] = ds;
                    gt[ch] = dt;
                }
                vec![(input.0, gx), (scale.0, gs), (shift.0, gt)]
            }
            Op::LeakyRelu { input, slope } => {
                let x = &self.nodes[input.0].value;
                let gx = x
                    .data
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| g * if v > 0.0 { 1.0 } else { *slope })
                    .collect();
                vec![(input.0, gx)]
            }
            Op::Sigmoid { input } => {
                let y = &node.value;
                let gx = y.data.iter().zip(grad).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                vec![(input.0, gx)]
            }
            Op::UpsampleBilinear2x { input } => {
                let x = &self.nodes[input.0].value;
                let (_, h, w) = x.chw_dims().unwrap();
                let (oh, ow) = (2 * h, 2 * w);
                let ytaps = bilinear_taps(h);
                let xtaps = bilinear_taps(w);
                let mut gx = vec![0.0; x.len()];
                let plane = h * w;
                let oplane = oh * ow;
                gx.par_chunks_mut(plane)
                    .zip(grad.par_chunks(oplane))
                    .for_each(|(gplane, goplane)| {
                        for oy in 0..oh {
                            let (y0, y1, fy) = ytaps[oy];
                            for ox in 0..ow {
                                let (x0, x1, fx) = xtaps[ox];
                                let g = goplane[oy * ow + ox];
                                gplane[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * g;
                                gplane[y0 * w + x1] += (1.0 - fy) * fx * g;
                                gplane[y1 * w + x0] += fy * (1.0 - fx) * g;
                                gplane[y1 * w + x1] += fy * fx * g;
                            }
                        }
                    });
                vec![(input.0, gx)]
            }
            Op::Concat { a, b } => {
                let na = self.nodes[a.0].value.len();
                let nb = self.nodes[b.0].value.len();
                vec![(a.0, grad[..na].to_vec()), (b.0, grad[na..na + nb].to_vec())]
            }
            Op::Radon { input, geom } => {
                let size = geom.image_size;
                let mut gx = vec![0.0; self.nodes[input.0].value.len()];
                back_project_into(grad, geom, size, size, &mut gx);
                vec![(input.0, gx)]
            }
            Op::Discrepancy { pred, observed, disc } => {
                let p = &self.nodes[pred.0].value;
                let g0 = grad[0];
                let gp = p
                    .data
                    .iter()
                    .zip(observed)
                    .map(|(&a, &b)| g0 * disc.bin_value_grad(a, b).1)
                    .collect();
                vec![(pred.0, gp)]
            }
            Op::TvSmooth { input, eps } => {
                let x = &self.nodes[input.0].value;
                let (_, h, w) = x.chw_dims().unwrap();
                let (_, mut tv_grad) = tv_smooth_value_grad(&x.data, w, h, *eps);
                let g0 = grad[0];
                for g in &mut tv_grad {
                    *g *= g0;
                }
                vec![(input.0, tv_grad)]
            }
            Op::AddScaled { a, b, coeff } => {
                vec![(a.0, vec![grad[0]]), (b.0, vec![coeff * grad[0]])]
            }
            Op::WeightedSum { input, weights } => {
                let g0 = grad[0];
                let gx = weights.iter().map(|&wi| g0 * wi).collect();
                vec![(input.0, gx)]
            }
        }
    }
}

/// Per-output-pixel source taps for half-pixel-aligned 2x upsampling:
/// `(idx0, idx1, fraction)` along one axis.
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let clamped = src.clamp(0.0, (n - 1) as f64);
            let i0 = clamped.floor() as usize;
            let f = clamped - i0 as f64;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, f)
        })
        .collect()
}

/// Output channels processed together per pass. Row accumulators for a
/// block stay L1-resident while each input row is loaded once per
/// (channel, kernel-row) pass.
const CONV_BLOCK: usize = 4;

#[inline]
fn valid_lower(k: usize, pad: usize, stride: usize) -> usize {
    if k >= pad {
        0
    } else {
        // smallest o with o*stride + k >= pad
        (pad - k).div_ceil(stride)
    }
}

#[inline]
fn valid_upper(k: usize, pad: usize, stride: usize, extent: usize, out_extent: usize) -> usize {
    // exclusive bound with o*stride + k - pad < extent
    let lim = extent + pad;
    if lim <= k {
        return 0;
    }
    let max_incl = (lim - 1 - k) / stride;
    (max_incl + 1).min(out_extent)
}

#[allow(clippy::too_many_arguments)]
#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[f64],
    ic: usize,
    h: usize,
    w: usize,
    k: &[f64],
    _oc: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
    out: &mut [f64],
    oh: usize,
    ow: usize,
) {
    let iplane = h * w;
    let oplane = oh * ow;
    let ksz = ic * kh * kw;
    let fast3 = kh == 3 && kw == 3 && stride == 1 && pad == 1;
    let fast1 = kh == 1 && kw == 1 && stride == 1 && pad == 0;
    out.par_chunks_mut(oplane * CONV_BLOCK)
        .enumerate()
        .for_each(|(blk, out_blk)| {
            let oc0 = blk * CONV_BLOCK;
            let nb = out_blk.len() / oplane;
            let mut acc = vec![0.0; nb * ow];
            let mut kloc = [[0.0f64; 3]; CONV_BLOCK];
            for oy in 0..oh {
                for (b, a) in acc.chunks_mut(ow).enumerate() {
                    a.fill(bias[oc0 + b]);
                }
                for c in 0..ic {
                    if fast3 {
                        for ky in 0..3usize {
                            let iy = (oy + ky).wrapping_sub(1);
                            if iy >= h {
                                continue;
                            }
                            let xrow = &x[c * iplane + iy * w..c * iplane + (iy + 1) * w];
                            for b in 0..nb {
                                let kb = (oc0 + b) * ksz + c * 9 + ky * 3;
                                kloc[b] = [k[kb], k[kb + 1], k[kb + 2]];
                            }
                            if nb == CONV_BLOCK {
                                stencil_rows4(&mut acc, w, xrow, &kloc);
                            } else {
                                for b in 0..nb {
                                    stencil_row(&mut acc[b * w..(b + 1) * w], xrow, &kloc[b]);
                                }
                            }
                        }
                    } else if fast1 {
                        let xrow = &x[c * iplane + oy * w..c * iplane + (oy + 1) * w];
                        if nb == CONV_BLOCK {
                            let kv = [
                                k[oc0 * ksz + c],
                                k[(oc0 + 1) * ksz + c],
                                k[(oc0 + 2) * ksz + c],
                                k[(oc0 + 3) * ksz + c],
                            ];
                            axpy_rows4(&mut acc, w, xrow, &kv);
                        } else {
                            for b in 0..nb {
                                let kv = k[(oc0 + b) * ksz + c];
                                for (a, &xv) in acc[b * w..(b + 1) * w].iter_mut().zip(xrow) {
                                    *a += kv * xv;
                                }
                            }
                        }
                    } else {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            if iy < pad || iy >= h + pad {
                                continue;
                            }
                            let iy = iy - pad;
                            let xrow = &x[c * iplane + iy * w..c * iplane + (iy + 1) * w];
                            for kx in 0..kw {
                                let ox_lo = valid_lower(kx, pad, stride);
                                let ox_hi = valid_upper(kx, pad, stride, w, ow);
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                for b in 0..nb {
                                    let kval = k[(oc0 + b) * ksz + c * kh * kw + ky * kw + kx];
                                    let arow = &mut acc[b * ow + ox_lo..b * ow + ox_hi];
                                    for (i, a) in arow.iter_mut().enumerate() {
                                        let ox = ox_lo + i;
                                        *a += kval * xrow[ox * stride + kx - pad];
                                    }
                                }
                            }
                        }
                    }
                }
                for b in 0..nb {
                    out_blk[b * oplane + oy * ow..b * oplane + (oy + 1) * ow]
                        .copy_from_slice(&acc[b * ow..(b + 1) * ow]);
                }
            }
        });
}

/// Three-tap row stencil into one accumulator row:
/// `acc[i] += k0 x[i-1] + k1 x[i] + k2 x[i+1]` (zero beyond the ends).
#[inline]
fn stencil_row(acc: &mut [f64], x: &[f64], k: &[f64; 3]) {
    let w = x.len();
    if w == 1 {
        acc[0] += k[1] * x[0];
        return;
    }
    acc[0] += k[1] * x[0] + k[2] * x[1];
    for i in 1..w - 1 {
        acc[i] += k[0] * x[i - 1] + k[1] * x[i] + k[2] * x[i + 1];
    }
    acc[w - 1] += k[0] * x[w - 2] + k[1] * x[w - 1];
}

/// Three-tap stencil into four accumulator rows sharing one input row.
#[inline]
fn stencil_rows4(acc: &mut [f64], w: usize, x: &[f64], k: &[[f64; 3]; 4]) {
    let (a0, rest) = acc.split_at_mut(w);
    let (a1, rest) = rest.split_at_mut(w);
    let (a2, a3) = rest.split_at_mut(w);
    if w == 1 {
        a0[0] += k[0][1] * x[0];
        a1[0] += k[1][1] * x[0];
        a2[0] += k[2][1] * x[0];
        a3[0] += k[3][1] * x[0];
        return;
    }
    a0[0] += k[0][1] * x[0] + k[0][2] * x[1];
    a1[0] += k[1][1] * x[0] + k[1][2] * x[1];
    a2[0] += k[2][1] * x[0] + k[2][2] * x[1];
    a3[0] += k[3][1] * x[0] + k[3][2] * x[1];
    for i in 1..w - 1 {
        let xm = x[i - 1];
        let xc = x[i];
        let xp = x[i + 1];
        a0[i] += k[0][0] * xm + k[0][1] * xc + k[0][2] * xp;
        a1[i] += k[1][0] * xm + k[1][1] * xc + k[1][2] * xp;
        a2[i] += k[2][0] * xm + k[2][1] * xc + k[2][2] * xp;
        a3[i] += k[3][0] * xm + k[3][1] * xc + k[3][2] * xp;
    }
    a0[w - 1] += k[0][0] * x[w - 2] + k[0][1] * x[w - 1];
    a1[w - 1] += k[1][0] * x[w - 2] + k[1][1] * x[w - 1];
    a2[w - 1] += k[2][0] * x[w - 2] + k[2][1] * x[w - 1];
    a3[w - 1] += k[3][0] * x[w - 2] + k[3][1] * x[w - 1];
}

/// `acc[b][i] += k[b] * x[i]` for four rows sharing one input row.
#[inline]
fn axpy_rows4(acc: &mut [f64], w: usize, x: &[f64], k: &[f64; 4]) {
    let (a0, rest) = acc.split_at_mut(w);
    let (a1, rest) = rest.split_at_mut(w);
    let (a2, a3) = rest.split_at_mut(w);
    for i in 0..w {
        let xv = x[i];
        a0[i] += k[0] * xv;
        a1[i] += k[1] * xv;
        a2[i] += k[2] * xv;
        a3[i] += k[3] * xv;
    }
}

/// Deterministic row dot product: eight interleaved accumulators (fixed
/// association) plus a strict tail.
#[inline]
fn dot_rows(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 8;
    let mut lanes = [0.0f64; 8];
    for i in 0..chunks {
        for j in 0..8 {
            lanes[j] += a[i * 8 + j] * b[i * 8 + j];
        }
    }
    let mut acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for i in chunks * 8..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Deterministic row sum with eight interleaved accumulators.
#[inline]
fn row_sum(a: &[f64]) -> f64 {
    let chunks = a.len() / 8;
    let mut lanes = [0.0f64; 8];
    for i in 0..chunks {
        for j in 0..8 {
            lanes[j] += a[i * 8 + j];
        }
    }
    let mut acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for v in &a[chunks * 8..] {
        acc += v;
    }
    acc
}

/// Fused three-shift row dots with four interleaved lanes per shift:
/// `s0 = sum_i g[i] x[i-1]`, `s1 = sum_i g[i] x[i]`, `s2 = sum_i g[i] x[i+1]`
/// over the in-range parts of each sum.
#[inline]
fn stencil_dots(g: &[f64], x: &[f64]) -> (f64, f64, f64) {
    let w = x.len();
    debug_assert_eq!(g.len(), w);
    if w == 1 {
        return (0.0, g[0] * x[0], 0.0);
    }
    let mut l0 = [0.0f64; 4];
    let mut l1 = [0.0f64; 4];
    let mut l2 = [0.0f64; 4];
    let interior = w - 2; // i in [1, w-1)
    let chunks = interior / 4;
    for cch in 0..chunks {
        let base = 1 + cch * 4;
        for j in 0..4 {
            let i = base + j;
            let gv = g[i];
            l0[j] += gv * x[i - 1];
            l1[j] += gv * x[i];
            l2[j] += gv * x[i + 1];
        }
    }
    let mut s0 = (l0[0] + l0[1]) + (l0[2] + l0[3]);
    let mut s1 = (l1[0] + l1[1]) + (l1[2] + l1[3]);
    let mut s2 = (l2[0] + l2[1]) + (l2[2] + l2[3]);
    for i in 1 + chunks * 4..w - 1 {
        let gv = g[i];
        s0 += gv * x[i - 1];
        s1 += gv * x[i];
        s2 += gv * x[i + 1];
    }
    // Boundary columns.
    s1 += g[0] * x[0];
    s2 += g[0] * x[1];
    s0 += g[w - 1] * x[w - 2];
    s1 += g[w - 1] * x[w - 1];
    (s0, s1, s2)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    x: &[f64],
    ic: usize,
    h: usize,
    w: usize,
    k: &[f64],
    oc: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    gout: &[f64],
    oh: usize,
    ow: usize,
    gx: &mut [f64],
    gk: &mut [f64],
    gb: &mut [f64],
) {
    let iplane = h * w;
    let oplane = oh * ow;
    let ksz = ic * kh * kw;
    let fast3 = kh == 3 && kw == 3 && stride == 1 && pad == 1;
    let fast1 = kh == 1 && kw == 1 && stride == 1 && pad == 0;

    // Bias and kernel gradients: independent per output channel.
    gb.par_iter_mut()
        .zip(gk.par_chunks_mut(ksz))
        .enumerate()
        .for_each(|(o, (gbo, gko))| {
            let g = &gout[o * oplane..(o + 1) * oplane];
            let mut bias_acc = 0.0;
            for row in g.chunks(ow) {
                bias_acc += row_sum(row);
            }
            *gbo += bias_acc;
            for c in 0..ic {
                let xin = &x[c * iplane..(c + 1) * iplane];
                if fast3 {
                    for ky in 0..3usize {
                        let mut sums = (0.0, 0.0, 0.0);
                        for oy in 0..oh {
                            let iy = (oy + ky).wrapping_sub(1);
                            if iy >= h {
                                continue;
                            }
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            let xrow = &xin[iy * w..(iy + 1) * w];
                            let (d0, d1, d2) = stencil_dots(grow, xrow);
                            sums.0 += d0;
                            sums.1 += d1;
                            sums.2 += d2;
                        }
                        let kb = c * 9 + ky * 3;
                        gko[kb] += sums.0;
                        gko[kb + 1] += sums.1;
                        gko[kb + 2] += sums.2;
                    }
                } else if fast1 {
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        acc += dot_rows(&g[oy * ow..(oy + 1) * ow], &xin[oy * w..(oy + 1) * w]);
                    }
                    gko[c] += acc;
                } else {
                    for ky in 0..kh {
                        let oy_lo = valid_lower(ky, pad, stride);
                        let oy_hi = valid_upper(ky, pad, stride, h, oh);
                        for kx in 0..kw {
                            let ox_lo = valid_lower(kx, pad, stride);
                            let ox_hi = valid_upper(kx, pad, stride, w, ow);
                            if oy_lo >= oy_hi || ox_lo >= ox_hi {
                                continue;
                            }
                            let mut acc = 0.0;
                            for oy in oy_lo..oy_hi {
                                let iy = oy * stride + ky - pad;
                                let grow = &g[oy * ow + ox_lo..oy * ow + ox_hi];
                                let xrow = &xin[iy * w..(iy + 1) * w];
                                let mut s = 0.0;
                                for (i, gv) in grow.iter().enumerate() {
                                    let ox = ox_lo + i;
                                    s += gv * xrow[ox * stride + kx - pad];
                                }
                                acc += s;
                            }
                            gko[c * kh * kw + ky * kw + kx] += acc;
                        }
                    }
                }
            }
        });

    // Input gradient, gathered per input-channel block.
    gx.par_chunks_mut(iplane * CONV_BLOCK)
        .enumerate()
        .for_each(|(blk, gx_blk)| {
            let c0 = blk * CONV_BLOCK;
            let nb = gx_blk.len() / iplane;
            let mut acc = vec![0.0; nb * w];
            let mut kloc = [[0.0f64; 3]; CONV_BLOCK];
            for iy in 0..h {
                acc.fill(0.0);
                if fast3 {
                    for ky in 0..3usize {
                        let oy = (iy + 1).wrapping_sub(ky);
                        if oy >= oh {
                            continue;
                        }
                        for o in 0..oc {
                            let grow = &gout[o * oplane + oy * ow..o * oplane + (oy + 1) * ow];
                            for (b, kb) in kloc.iter_mut().enumerate().take(nb) {
                                let base = o * ksz + (c0 + b) * 9 + ky * 3;
                                // Gather runs the kernel row reversed.
                                *kb = [k[base + 2], k[base + 1], k[base]];
                            }
                            if nb == CONV_BLOCK {
                                stencil_rows4(&mut acc, w, grow, &kloc);
                            } else {
                                for b in 0..nb {
                                    stencil_row(&mut acc[b * w..(b + 1) * w], grow, &kloc[b]);
                                }
                            }
                        }
                    }
                } else if fast1 {
                    for o in 0..oc {
                        let grow = &gout[o * oplane + iy * ow..o * oplane + (iy + 1) * ow];
                        if nb == CONV_BLOCK {
                            let kv = [
                                k[o * ksz + c0],
                                k[o * ksz + c0 + 1],
                                k[o * ksz + c0 + 2],
                                k[o * ksz + c0 + 3],
                            ];
                            axpy_rows4(&mut acc, w, grow, &kv);
                        } else {
                            for b in 0..nb {
                                let kv = k[o * ksz + c0 + b];
                                for (a, &gv) in acc[b * w..(b + 1) * w].iter_mut().zip(grow) {
                                    *a += kv * gv;
                                }
                            }
                        }
                    }
                } else {
                    for ky in 0..kh {
                        // oy with oy*stride + ky - pad == iy
                        let num = iy + pad;
                        if num < ky {
                            continue;
                        }
                        let diff = num - ky;
                        if diff % stride != 0 {
                            continue;
                        }
                        let oy = diff / stride;
                        if oy >= oh {
                            continue;
                        }
                        for o in 0..oc {
                            let grow = &gout[o * oplane + oy * ow..o * oplane + (oy + 1) * ow];
                            for kx in 0..kw {
                                let ox_lo = valid_lower(kx, pad, stride);
                                let ox_hi = valid_upper(kx, pad, stride, w, ow);
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                for b in 0..nb {
                                    let kval = k[o * ksz + (c0 + b) * kh * kw + ky * kw + kx];
                                    let arow = &mut acc[b * w..(b + 1) * w];
                                    for (i, gv) in grow[ox_lo..ox_hi].iter().enumerate() {
                                        let ox = ox_lo + i;
                                        arow[ox * stride + kx - pad] += kval * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                for b in 0..nb {
                    let dst = &mut gx_blk[b * iplane + iy * w..b * iplane + (iy + 1) * w];
                    for (d, a) in dst.iter_mut().zip(&acc[b * w..(b + 1) * w]) {
                        *d += a;
                    }
                }
            }
        });
}
