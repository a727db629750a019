//! Forward and backward layer primitives.
//!
//! All spatial mixing in the networks happens in max pooling; convolutions
//! are strictly 1x1 (channel mixing only), which keeps every kernel here a
//! plane-contiguous streaming loop.

use super::{Shape4, Tensor};
use crate::error::{Error, Result};

/// Weights and bias of a 1x1 convolution. The weight tensor has shape
/// (c_out, c_in, 1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Vec<f32>) -> Result<Self> {
        let s = weights.shape();
        if s.h != 1 || s.w != 1 {
            return Err(Error::shape("ConvParams", "kernel spatial extent 1x1", s));
        }
        if bias.len() != s.n {
            return Err(Error::shape("ConvParams bias", s.n, bias.len()));
        }
        Ok(ConvParams { weights, bias })
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape().c
    }

    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        ConvParams {
            weights: Tensor::zeros(Shape4::new(c_out, c_in, 1, 1)),
            bias: vec![0.0; c_out],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.shape().len() + self.bias.len()
    }
}

/// Gradients returned by [`pointwise_conv_backward`].
#[derive(Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

/// out[n,o,y,x] = bias[o] + sum_i weights[o,i] * input[n,i,y,x].
pub fn pointwise_conv_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    if params.c_in() != s.c {
        return Err(Error::shape(
            "pointwise_conv_forward",
            format!("input channels {}", params.c_in()),
            s,
        ));
    }
    let mut out = Tensor::zeros(Shape4::new(s.n, params.c_out(), s.h, s.w));
    conv_forward_into(input, params, &mut out, false);
    Ok(out)
}

/// Shared kernel: writes conv output (optionally ReLU-clamped) into `out`,
/// which must already have the right shape. The bias folds into the first
/// channel pass and the clamp into the last, so each output plane is
/// touched exactly c_in times.
pub(crate) fn conv_forward_into(input: &Tensor, params: &ConvParams, out: &mut Tensor, relu: bool) {
    let s = input.shape();
    let c_in = params.c_in();
    let c_out = params.c_out();
    let w = params.weights.data();
    for n in 0..s.n {
        for o in 0..c_out {
            let (bias, wrow) = (params.bias[o], &w[o * c_in..(o + 1) * c_in]);
            let op = out.plane_mut(n, o);
            if c_in == 0 {
                let v = if relu && bias < 0.0 { 0.0 } else { bias };
                op.fill(v);
                continue;
            }
            let last = c_in - 1;
            for (i, &wv) in wrow.iter().enumerate() {
                let ip = input.plane(n, i);
                match (i == 0, i == last) {
                    (true, true) => {
                        for (ov, iv) in op.iter_mut().zip(ip.iter()) {
                            let v = bias + wv * iv;
                            *ov = if relu && v < 0.0 { 0.0 } else { v };
                        }
                    }
                    (true, false) => {
                        for (ov, iv) in op.iter_mut().zip(ip.iter()) {
                            *ov = bias + wv * iv;
                        }
                    }
                    (false, true) => {
                        for (ov, iv) in op.iter_mut().zip(ip.iter()) {
                            let v = *ov + wv * iv;
                            *ov = if relu && v < 0.0 { 0.0 } else { v };
                        }
                    }
                    (false, false) => {
                        for (ov, iv) in op.iter_mut().zip(ip.iter()) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
}

/// Exact analytic gradients of the pointwise convolution.
pub fn pointwise_conv_backward(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let s = input.shape();
    let gs = grad_out.shape();
    if params.c_in() != s.c {
        return Err(Error::shape("pointwise_conv_backward", params.c_in(), s));
    }
    let expect = Shape4::new(s.n, params.c_out(), s.h, s.w);
    if gs != expect {
        return Err(Error::shape("pointwise_conv_backward grad_out", expect, gs));
    }
    let mut grads = ConvGrads {
        input: Tensor::zeros(s),
        weights: Tensor::zeros(params.weights.shape()),
        bias: vec![0.0; params.c_out()],
    };
    conv_backward_kernel(
        input,
        &params.weights,
        grad_out,
        grads.weights.data_mut(),
        &mut grads.bias,
        Some(&mut grads.input),
    );
    Ok(grads)
}

/// Backward kernel shared with the graph evaluator. Accumulates weight and
/// bias gradients into `dw`/`db`; `grad_in`, when requested, is overwritten.
/// Gradients flowing out of a pooling layer are zero almost everywhere, so
/// the per-pixel zero test pays for itself; the dense case degrades
/// gracefully to the full loops.
pub(crate) fn conv_backward_kernel(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    dw: &mut [f32],
    db: &mut [f32],
    mut grad_in: Option<&mut Tensor>,
) {
    let s = input.shape();
    let c_in = weights.shape().c;
    let c_out = weights.shape().n;
    let hw = s.hw();
    let w = weights.data();
    if let Some(gi) = grad_in.as_deref_mut() {
        for v in gi.data_mut() {
            *v = 0.0;
        }
    }
    for n in 0..s.n {
        for o in 0..c_out {
            let gp = grad_out.plane(n, o);
            let mut gsum = 0.0f32;
            let gw = &mut dw[o * c_in..(o + 1) * c_in];
            for (p, &g) in gp.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gsum += g;
                for i in 0..c_in {
                    gw[i] += g * input.data()[(n * c_in + i) * hw + p];
                }
            }
            db[o] += gsum;
            if let Some(gi) = grad_in.as_deref_mut() {
                let wrow = &w[o * c_in..(o + 1) * c_in];
                for (p, &g) in gp.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for (i, &wv) in wrow.iter().enumerate() {
                        gi.data_mut()[(n * c_in + i) * hw + p] += g * wv;
                    }
                }
            }
        }
    }
}

/// Elementwise max(x, 0).
pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Routes gradient only where the forward input was positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu_backward", input.shape(), grad_out.shape()));
    }
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}

/// Winning input coordinates of a max pooling pass, needed to route the
/// gradient back. `idx` stores y*w + x into the input plane, one entry per
/// output cell in (n, c, oy, ox) order.
#[derive(Debug, Clone)]
pub struct ArgmaxMap {
    pub in_shape: Shape4,
    pub out_shape: Shape4,
    pub idx: Vec<u32>,
}

/// Max pooling with implicit -inf padding, so padded cells can never win.
/// Output dims ((h + 2p - kh)/s + 1, (w + 2p - kw)/s + 1) must be exact.
pub fn maxpool_forward(
    input: &Tensor,
    kernel: (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<(Tensor, ArgmaxMap)> {
    let s = input.shape();
    let (kh, kw) = kernel;
    if kh == 0 || kw == 0 || stride == 0 {
        return Err(Error::Argument("maxpool kernel and stride must be positive".into()));
    }
    if pad >= kh || pad >= kw {
        return Err(Error::Argument(format!(
            "maxpool pad {pad} must be smaller than kernel {kh}x{kw}"
        )));
    }
    let span_h = s.h + 2 * pad;
    let span_w = s.w + 2 * pad;
    if span_h < kh || span_w < kw || (span_h - kh) % stride != 0 || (span_w - kw) % stride != 0 {
        return Err(Error::shape(
            "maxpool_forward",
            format!("input dims compatible with kernel {kh}x{kw} stride {stride} pad {pad}"),
            s,
        ));
    }
    let oh = (span_h - kh) / stride + 1;
    let ow = (span_w - kw) / stride + 1;
    let out_shape = Shape4::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut idx = vec![0u32; out_shape.len()];
    maxpool_into(input, (kh, kw), stride, pad, &mut out, &mut idx);
    Ok((out, ArgmaxMap { in_shape: s, out_shape, idx }))
}

/// The pooling kernel. Window bounds are clamped once per window, so the
/// scan over window pixels is branch-free.
pub(crate) fn maxpool_into(
    input: &Tensor,
    kernel: (usize, usize),
    stride: usize,
    pad: usize,
    out: &mut Tensor,
    idx: &mut [u32],
) {
    let s = input.shape();
    let (kh, kw) = kernel;
    let (oh, ow) = (out.shape().h, out.shape().w);
    // clamped (start, end) per output coordinate, shared by all planes
    let clamp_axis = |olen: usize, klen: usize, ilen: usize| -> Vec<(usize, usize)> {
        (0..olen)
            .map(|o| {
                let lo = (o * stride) as isize - pad as isize;
                ((lo.max(0)) as usize, ((lo + klen as isize) as usize).min(ilen))
            })
            .collect()
    };
    let ys = clamp_axis(oh, kh, s.h);
    let xs = clamp_axis(ow, kw, s.w);
    for n in 0..s.n {
        for c in 0..s.c {
            let ip = input.plane(n, c);
            let op = out.plane_mut(n, c);
            let plane_idx = &mut idx[(n * s.c + c) * oh * ow..(n * s.c + c + 1) * oh * ow];
            let mut cell = 0usize;
            for &(ys0, ys1) in &ys {
                for &(xs0, xs1) in &xs {
                    let (best, best_at) = window_argmax(ip, s.w, ys0, ys1, xs0, xs1);
                    op[cell] = best;
                    plane_idx[cell] = best_at;
                    cell += 1;
                }
            }
        }
    }
}

/// Argmax over one window, first maximum in scan order. Large windows run
/// a vectorizable max pass first and locate the winner in a second pass;
/// the naive fused scan has a serial dependency per element that dominates
/// pooling cost otherwise.
#[inline]
pub(crate) fn window_argmax(
    ip: &[f32],
    w: usize,
    ys0: usize,
    ys1: usize,
    xs0: usize,
    xs1: usize,
) -> (f32, u32) {
    let width = xs1 - xs0;
    if (ys1 - ys0) * width >= 48 {
        const LANES: usize = 8;
        let mut acc = [f32::NEG_INFINITY; LANES];
        for y in ys0..ys1 {
            let row = &ip[y * w + xs0..y * w + xs1];
            let mut chunks = row.chunks_exact(LANES);
            for ch in &mut chunks {
                for (a, &v) in acc.iter_mut().zip(ch) {
                    *a = a.max(v);
                }
            }
            for (a, &v) in acc.iter_mut().zip(chunks.remainder()) {
                *a = a.max(v);
            }
        }
        let best = acc.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for y in ys0..ys1 {
            let row = &ip[y * w + xs0..y * w + xs1];
            if let Some(off) = row.iter().position(|&v| v == best) {
                return (best, (y * w + xs0 + off) as u32);
            }
        }
        unreachable!("window maximum not found on second pass");
    }
    let mut best = f32::NEG_INFINITY;
    let mut best_at = 0u32;
    for y in ys0..ys1 {
        let row = &ip[y * w + xs0..y * w + xs1];
        for (off, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                best_at = (y * w + xs0 + off) as u32;
            }
        }
    }
    (best, best_at)
}

/// Scatters the gradient to the recorded winners; everything else stays
/// zero. Ties were already broken to the first cell in scan order by the
/// strict `>` in the forward pass.
pub fn maxpool_backward(map: &ArgmaxMap, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != map.out_shape {
        return Err(Error::shape("maxpool_backward", map.out_shape, grad_out.shape()));
    }
    let mut grad = Tensor::zeros(map.in_shape);
    let hw = map.in_shape.hw();
    let ohw = map.out_shape.hw();
    for nc in 0..map.in_shape.n * map.in_shape.c {
        let gp = &grad_out.data()[nc * ohw..(nc + 1) * ohw];
        let ip = &mut grad.data_mut()[nc * hw..(nc + 1) * hw];
        let cells = &map.idx[nc * ohw..(nc + 1) * ohw];
        for (&at, &g) in cells.iter().zip(gp.iter()) {
            ip[at as usize] += g;
        }
    }
    Ok(grad)
}

/// Stacks tensors along the channel axis in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Argument("concat_channels needs at least one input".into()))?;
    let s0 = first.shape();
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        if s.n != s0.n || s.h != s0.h || s.w != s0.w {
            return Err(Error::shape("concat_channels", s0, s));
        }
        c_total += s.c;
    }
    let shape = Shape4::new(s0.n, c_total, s0.h, s0.w);
    let mut out = Tensor::zeros(shape);
    for n in 0..s0.n {
        let mut c_base = 0;
        for t in inputs {
            for c in 0..t.shape().c {
                out.plane_mut(n, c_base + c).copy_from_slice(t.plane(n, c));
            }
            c_base += t.shape().c;
        }
    }
    Ok(out)
}

/// Extracts channels [c0, c1) as a new tensor; inverse of concatenation.
pub fn slice_channels(input: &Tensor, c0: usize, c1: usize) -> Result<Tensor> {
    let s = input.shape();
    if c0 >= c1 || c1 > s.c {
        return Err(Error::Argument(format!(
            "channel slice {c0}..{c1} out of range for {} channels",
            s.c
        )));
    }
    let mut out = Tensor::zeros(Shape4::new(s.n, c1 - c0, s.h, s.w));
    for n in 0..s.n {
        for c in c0..c1 {
            out.plane_mut(n, c - c0).copy_from_slice(input.plane(n, c));
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel-aligned sample coordinates:
/// src = (dst + 0.5) * in/out - 0.5, edge-clamped. Constant inputs map to
/// the same constant output; equal target size is the identity.
pub fn bilinear_resize(input: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let s = input.shape();
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::Argument("bilinear_resize target must be at least 1x1".into()));
    }
    if (th, tw) == (s.h, s.w) {
        return Ok(input.clone());
    }
    // Per-axis sample positions: (lo index, hi index, hi weight).
    let axis = |len: usize, tlen: usize| -> Vec<(usize, usize, f32)> {
        (0..tlen)
            .map(|d| {
                let src = (d as f32 + 0.5) * len as f32 / tlen as f32 - 0.5;
                let lo = src.floor();
                let frac = src - lo;
                let lo = lo as isize;
                let a = lo.clamp(0, len as isize - 1) as usize;
                let b = (lo + 1).clamp(0, len as isize - 1) as usize;
                (a, b, frac)
            })
            .collect()
    };
    let ys = axis(s.h, th);
    let xs = axis(s.w, tw);
    let mut out = Tensor::zeros(Shape4::new(s.n, s.c, th, tw));
    for n in 0..s.n {
        for c in 0..s.c {
            let ip = input.plane(n, c);
            let op = out.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let r0 = &ip[y0 * s.w..y0 * s.w + s.w];
                let r1 = &ip[y1 * s.w..y1 * s.w + s.w];
                let orow = &mut op[oy * tw..(oy + 1) * tw];
                for (ov, &(x0, x1, fx)) in orow.iter_mut().zip(xs.iter()) {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    *ov = top + (bot - top) * fy;
                }
            }
        }
    }
    Ok(out)
}
