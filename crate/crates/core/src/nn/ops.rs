//! Forward and reverse-mode kernels for the reference CNN.
//!
//! Convolution is cross-correlation (no kernel flip). ReLU has gradient 0 at
//! exactly 0. Max pooling routes gradients to the first maximum of each
//! window in row-major order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::backend::{conv_param_count, dense_param_count, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(c_out, c_in, k, k)`
    pub weight: Tensor4,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }
    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpNode {
    Conv(Conv2d),
    Relu,
    MaxPool { size: usize, stride: usize },
    Gap,
    Dense(Dense),
    Softmax,
}

/// State recorded by [`op_forward`] that [`op_backward`] needs.
#[derive(Debug, Clone, PartialEq)]
pub enum OpCache {
    None,
    /// Flat input index of the selected element for each output element.
    MaxPool { argmax: Vec<usize> },
    Softmax { output: Tensor4 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrads {
    Conv { weight: Tensor4, bias: Vec<f64> },
    Dense { weight: Vec<f64>, bias: Vec<f64> },
}

impl OpNode {
    pub fn kind(&self) -> LayerKind {
        match self {
            OpNode::Conv(_) => LayerKind::Conv,
            OpNode::Relu => LayerKind::Relu,
            OpNode::MaxPool { .. } => LayerKind::MaxPool,
            OpNode::Gap => LayerKind::Gap,
            OpNode::Dense(_) => LayerKind::Dense,
            OpNode::Softmax => LayerKind::Softmax,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            OpNode::Conv(c) => conv_param_count(c.kernel(), c.c_in(), c.c_out()),
            OpNode::Dense(d) => dense_param_count(d.n_in, d.n_out),
            _ => 0,
        }
    }

    /// Checks hyper-parameters and parameter values.
    pub fn validate(&self) -> Result<()> {
        match self {
            OpNode::Conv(c) => {
                let [_, _, kh, kw] = c.weight.shape();
                if kh != kw || kh == 0 {
                    return Err(Error::Precondition(format!("conv kernel must be square and non-empty, got {kh}x{kw}")));
                }
                if c.stride == 0 {
                    return Err(Error::Precondition("conv stride must be >= 1".into()));
                }
                if c.bias.len() != c.c_out() {
                    return Err(Error::Shape(format!("conv bias has {} entries for {} filters", c.bias.len(), c.c_out())));
                }
                if !c.weight.is_finite() || c.bias.iter().any(|b| !b.is_finite()) {
                    return Err(Error::Precondition("conv parameters must be finite".into()));
                }
            }
            OpNode::MaxPool { size, stride } => {
                if *size == 0 || *stride == 0 {
                    return Err(Error::Precondition("pool size and stride must be >= 1".into()));
                }
            }
            OpNode::Dense(d) => {
                if d.weight.len() != d.n_in * d.n_out || d.bias.len() != d.n_out {
                    return Err(Error::Shape(format!("dense {}->{} has mismatched parameter lengths", d.n_in, d.n_out)));
                }
                if d.weight.iter().chain(&d.bias).any(|v| !v.is_finite()) {
                    return Err(Error::Precondition("dense parameters must be finite".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [n, c, h, w] = input;
        match self {
            OpNode::Conv(conv) => {
                if c != conv.c_in() {
                    return Err(Error::Shape(format!("conv expects {} input channels, got {c}", conv.c_in())));
                }
                let k = conv.kernel();
                let (ph, pw) = (h + 2 * conv.padding, w + 2 * conv.padding);
                if k > ph || k > pw {
                    return Err(Error::Shape(format!("{k}x{k} kernel does not fit padded {ph}x{pw} input")));
                }
                Ok([n, conv.c_out(), (ph - k) / conv.stride + 1, (pw - k) / conv.stride + 1])
            }
            OpNode::Relu | OpNode::Softmax => Ok(input),
            OpNode::MaxPool { size, stride } => {
                if *size > h || *size > w {
                    return Err(Error::Shape(format!("{size}x{size} pool window larger than {h}x{w} input")));
                }
                Ok([n, c, (h - size) / stride + 1, (w - size) / stride + 1])
            }
            OpNode::Gap => Ok([n, c, 1, 1]),
            OpNode::Dense(d) => {
                if c * h * w != d.n_in {
                    return Err(Error::Shape(format!("dense expects {} inputs, got {}", d.n_in, c * h * w)));
                }
                Ok([n, d.n_out, 1, 1])
            }
        }
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn op_forward(node: &OpNode, input: &Tensor4) -> Result<(Tensor4, OpCache)> {
    let out_shape = node.output_shape(input.shape())?;
    match node {
        OpNode::Conv(conv) => Ok((conv_forward(conv, input, out_shape), OpCache::None)),
        OpNode::Relu => Ok((input.map(|v| if v > 0.0 { v } else { 0.0 }), OpCache::None)),
        OpNode::MaxPool { size, stride } => {
            let (out, argmax) = maxpool_forward(input, *size, *stride, out_shape);
            Ok((out, OpCache::MaxPool { argmax }))
        }
        OpNode::Gap => {
            let [n, c, h, w] = input.shape();
            let mut out = Tensor4::zeros(out_shape);
            let area = (h * w) as f64;
            for b in 0..n {
                for ch in 0..c {
                    let mut sum = 0.0;
                    for y in 0..h {
                        for x in 0..w {
                            sum += input.get(b, ch, y, x);
                        }
                    }
                    out.set(b, ch, 0, 0, sum / area);
                }
            }
            Ok((out, OpCache::None))
        }
        OpNode::Dense(d) => {
            let n = input.shape()[0];
            let mut out = Tensor4::zeros(out_shape);
            for b in 0..n {
                let x = &input.data()[b * d.n_in..(b + 1) * d.n_in];
                for o in 0..d.n_out {
                    let row = &d.weight[o * d.n_in..(o + 1) * d.n_in];
                    let mut acc = d.bias[o];
                    for (wv, xv) in row.iter().zip(x) {
                        acc += wv * xv;
                    }
                    out.data_mut()[b * d.n_out + o] = acc;
                }
            }
            Ok((out, OpCache::None))
        }
        OpNode::Softmax => {
            let [n, c, h, w] = input.shape();
            let per = c * h * w;
            let mut out = Tensor4::zeros(out_shape);
            for b in 0..n {
                let s = softmax(&input.data()[b * per..(b + 1) * per]);
                out.data_mut()[b * per..(b + 1) * per].copy_from_slice(&s);
            }
            Ok((out.clone(), OpCache::Softmax { output: out }))
        }
    }
}

fn conv_forward(conv: &Conv2d, input: &Tensor4, out_shape: [usize; 4]) -> Tensor4 {
    let [n, c_in, h, w] = input.shape();
    let [_, c_out, oh, ow] = out_shape;
    let k = conv.kernel();
    let pad = conv.padding as isize;
    let mut out = Tensor4::zeros(out_shape);
    for b in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            let iy = (oy * conv.stride + ky) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * conv.stride + kx) as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += conv.weight.get(co, ci, ky, kx) * input.get(b, ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(b, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

fn maxpool_forward(input: &Tensor4, size: usize, stride: usize, out_shape: [usize; 4]) -> (Tensor4, Vec<usize>) {
    let [n, c, _, _] = input.shape();
    let [_, _, oh, ow] = out_shape;
    let mut out = Tensor4::zeros(out_shape);
    let mut argmax = vec![0usize; out.len()];
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = input.index(b, ch, oy * stride, ox * stride);
                    let mut best = input.data()[best_idx];
                    for py in 0..size {
                        for px in 0..size {
                            let idx = input.index(b, ch, oy * stride + py, ox * stride + px);
                            // strict comparison keeps the first maximum in row-major order
                            if input.data()[idx] > best {
                                best = input.data()[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = out.index(b, ch, oy, ox);
                    out.data_mut()[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

/// Reverse-mode step: gradient of a scalar w.r.t. the op's input (and
/// parameters), given the gradient w.r.t. its output.
pub fn op_backward(
    node: &OpNode,
    input: &Tensor4,
    cache: &OpCache,
    upstream: &Tensor4,
) -> Result<(Tensor4, Option<ParamGrads>)> {
    let out_shape = node.output_shape(input.shape())?;
    upstream.expect_shape(out_shape)?;
    match node {
        OpNode::Conv(conv) => {
            let (gi, gp) = conv_backward(conv, input, upstream);
            Ok((gi, Some(gp)))
        }
        OpNode::Relu => Ok((input.zip_map(upstream, |x, g| if x > 0.0 { g } else { 0.0 })?, None)),
        OpNode::MaxPool { .. } => {
            let OpCache::MaxPool { argmax } = cache else {
                return Err(Error::Cache("maxpool backward needs the recorded argmax"));
            };
            if argmax.len() != upstream.len() {
                return Err(Error::Cache("maxpool argmax does not match upstream gradient"));
            }
            let mut grad = Tensor4::zeros(input.shape());
            for (o, &src) in argmax.iter().enumerate() {
                grad.data_mut()[src] += upstream.data()[o];
            }
            Ok((grad, None))
        }
        OpNode::Gap => {
            let [n, c, h, w] = input.shape();
            let area = (h * w) as f64;
            let mut grad = Tensor4::zeros(input.shape());
            for b in 0..n {
                for ch in 0..c {
                    let g = upstream.get(b, ch, 0, 0) / area;
                    for v in &mut grad.data_mut()[((b * c + ch) * h * w)..((b * c + ch + 1) * h * w)] {
                        *v = g;
                    }
                }
            }
            Ok((grad, None))
        }
        OpNode::Dense(d) => {
            let n = input.shape()[0];
            let mut grad = Tensor4::zeros(input.shape());
            let mut gw = vec![0.0; d.weight.len()];
            let mut gb = vec![0.0; d.n_out];
            for b in 0..n {
                let x = &input.data()[b * d.n_in..(b + 1) * d.n_in];
                for o in 0..d.n_out {
                    let g = upstream.data()[b * d.n_out + o];
                    gb[o] += g;
                    for i in 0..d.n_in {
                        gw[o * d.n_in + i] += g * x[i];
                        grad.data_mut()[b * d.n_in + i] += g * d.weight[o * d.n_in + i];
                    }
                }
            }
            Ok((grad, Some(ParamGrads::Dense { weight: gw, bias: gb })))
        }
        OpNode::Softmax => {
            let OpCache::Softmax { output } = cache else {
                return Err(Error::Cache("softmax backward needs the forward output"));
            };
            output.expect_shape(out_shape).map_err(|_| Error::Cache("softmax cache has the wrong shape"))?;
            let [n, c, h, w] = input.shape();
            let per = c * h * w;
            let mut grad = Tensor4::zeros(input.shape());
            for b in 0..n {
                let s = &output.data()[b * per..(b + 1) * per];
                let g = &upstream.data()[b * per..(b + 1) * per];
                let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
                for i in 0..per {
                    grad.data_mut()[b * per + i] = s[i] * (g[i] - dot);
                }
            }
            Ok((grad, None))
        }
    }
}

fn conv_backward(conv: &Conv2d, input: &Tensor4, upstream: &Tensor4) -> (Tensor4, ParamGrads) {
    let [n, c_in, h, w] = input.shape();
    let [_, c_out, oh, ow] = upstream.shape();
    let k = conv.kernel();
    let pad = conv.padding as isize;
    let mut gi = Tensor4::zeros(input.shape());
    let mut gw = Tensor4::zeros(conv.weight.shape());
    let mut gb = vec![0.0; c_out];
    for b in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = upstream.get(b, co, oy, ox);
                    gb[co] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..c_in {
                        for ky in 0..k {
                            let iy = (oy * conv.stride + ky) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * conv.stride + kx) as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                let wi = gw.index(co, ci, ky, kx);
                                gw.data_mut()[wi] += g * input.get(b, ci, iy, ix);
                                let ii = gi.index(b, ci, iy, ix);
                                gi.data_mut()[ii] += g * conv.weight.get(co, ci, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    (gi, ParamGrads::Conv { weight: gw, bias: gb })
}
