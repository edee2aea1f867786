//! Central finite-difference checks for the reverse-mode kernels.
//!
//! The scalar probed is `L = Σ probe ⊙ op_forward(x)`, so the analytic
//! gradient is `op_backward(.., upstream = probe)`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{op_backward, op_forward, Conv2d, Dense, OpNode, ParamGrads};
use crate::backend::LayerKind;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-3;

/// Minimum distance kept between an input and a non-differentiable point
/// (ReLU kink, max-pool tie), well above the step so that central
/// differences never straddle one.
const KINK_MARGIN: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub node: OpNode,
    pub input: Tensor4,
    pub probe: Tensor4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub input_error: f64,
    /// `None` for parameter-free ops.
    pub param_error: Option<f64>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.input_error.max(self.param_error.unwrap_or(0.0))
    }
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn loss(node: &OpNode, input: &Tensor4, probe: &Tensor4) -> Result<f64> {
    let (out, _) = op_forward(node, input)?;
    Ok(out.data().iter().zip(probe.data()).map(|(o, p)| o * p).sum())
}

fn numeric_gradient(values: &mut [f64], mut eval: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut grad = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + FD_STEP;
        let plus = eval(values)?;
        values[i] = orig - FD_STEP;
        let minus = eval(values)?;
        values[i] = orig;
        grad.push((plus - minus) / (2.0 * FD_STEP));
    }
    Ok(grad)
}

fn flat_params(node: &OpNode) -> Option<Vec<f64>> {
    match node {
        OpNode::Conv(c) => Some(c.weight.data().iter().chain(&c.bias).copied().collect()),
        OpNode::Dense(d) => Some(d.weight.iter().chain(&d.bias).copied().collect()),
        _ => None,
    }
}

fn with_params(node: &OpNode, flat: &[f64]) -> OpNode {
    let mut node = node.clone();
    match &mut node {
        OpNode::Conv(c) => {
            let n = c.weight.len();
            c.weight.data_mut().copy_from_slice(&flat[..n]);
            c.bias.copy_from_slice(&flat[n..]);
        }
        OpNode::Dense(d) => {
            let n = d.weight.len();
            d.weight.copy_from_slice(&flat[..n]);
            d.bias.copy_from_slice(&flat[n..]);
        }
        _ => {}
    }
    node
}

/// Compares analytic input (and parameter) gradients against central differences.
pub fn check_case(case: &GradCase) -> Result<GradCheck> {
    let GradCase { node, input, probe } = case;
    let (_, cache) = op_forward(node, input)?;
    let (grad_input, grad_params) = op_backward(node, input, &cache, probe)?;

    let shape = input.shape();
    let mut x = input.data().to_vec();
    let numeric_input = numeric_gradient(&mut x, |v| {
        loss(node, &Tensor4::from_vec(shape, v.to_vec())?, probe)
    })?;
    let input_error = relative_error(grad_input.data(), &numeric_input);

    let param_error = match (flat_params(node), grad_params) {
        (Some(mut flat), Some(grads)) => {
            let analytic: Vec<f64> = match grads {
                ParamGrads::Conv { weight, bias } => weight.data().iter().chain(&bias).copied().collect(),
                ParamGrads::Dense { weight, bias } => weight.into_iter().chain(bias).collect(),
            };
            let numeric = numeric_gradient(&mut flat, |p| loss(&with_params(node, p), input, probe))?;
            Some(relative_error(&analytic, &numeric))
        }
        (None, None) => None,
        _ => return Err(Error::Cache("parameter gradients do not match the op kind")),
    };
    Ok(GradCheck { input_error, param_error })
}

fn uniform(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    Tensor4::from_vec(shape, uniform(rng, shape.iter().product())).expect("sized from shape")
}

/// Values bounded away from zero by the kink margin.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let magnitude = rng.gen_range(KINK_MARGIN..1.0);
            if rng.gen_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    Tensor4::from_vec(shape, data).expect("sized from shape")
}

/// Distinct values on a grid of spacing `KINK_MARGIN`, randomly permuted,
/// so no pooling window contains a near-tie.
fn distinct(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    let len: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..len).map(|i| i as f64 * KINK_MARGIN - 0.5).collect();
    for i in (1..len).rev() {
        data.swap(i, rng.gen_range(0..=i));
    }
    Tensor4::from_vec(shape, data).expect("sized from shape")
}

/// A random small instance of the op family `kind`, deterministic in `seed`.
pub fn random_case(kind: LayerKind, seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (node, input) = match kind {
        LayerKind::Conv => {
            let c_in = rng.gen_range(1..=3);
            let c_out = rng.gen_range(1..=3);
            let k = rng.gen_range(1..=3);
            let padding = rng.gen_range(0..=1);
            let stride = rng.gen_range(1..=2);
            let h = rng.gen_range(k..=6);
            let w = rng.gen_range(k..=6);
            let node = OpNode::Conv(Conv2d {
                weight: tensor(&mut rng, [c_out, c_in, k, k]),
                bias: uniform(&mut rng, c_out),
                stride,
                padding,
            });
            (node, tensor(&mut rng, [1, c_in, h, w]))
        }
        LayerKind::Relu => {
            let shape = [1, rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=5)];
            (OpNode::Relu, away_from_zero(&mut rng, shape))
        }
        LayerKind::MaxPool => {
            let size = rng.gen_range(1..=3);
            let stride = rng.gen_range(1..=size);
            let shape = [1, rng.gen_range(1..=2), rng.gen_range(size..=6), rng.gen_range(size..=6)];
            (OpNode::MaxPool { size, stride }, distinct(&mut rng, shape))
        }
        LayerKind::Gap => {
            let shape = [1, rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=5)];
            (OpNode::Gap, tensor(&mut rng, shape))
        }
        LayerKind::Dense => {
            let shape = [1, rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
            let n_in = shape[1] * shape[2] * shape[3];
            let n_out = rng.gen_range(1..=4);
            let node = OpNode::Dense(Dense {
                n_in,
                n_out,
                weight: uniform(&mut rng, n_in * n_out),
                bias: uniform(&mut rng, n_out),
            });
            (node, tensor(&mut rng, shape))
        }
        LayerKind::Softmax => {
            let n = rng.gen_range(2..=6);
            let logits = tensor(&mut rng, [1, n, 1, 1]).map(|v| 3.0 * v);
            (OpNode::Softmax, logits)
        }
        LayerKind::Other => return Err(Error::Precondition("no kernel for LayerKind::Other".into())),
    };
    let out_shape = node.output_shape(input.shape())?;
    let probe = tensor(&mut rng, out_shape);
    Ok(GradCase { node, input, probe })
}

/// Every op kind the reference CNN implements.
pub const CHECKED_KINDS: [LayerKind; 6] =
    [LayerKind::Conv, LayerKind::Relu, LayerKind::MaxPool, LayerKind::Gap, LayerKind::Dense, LayerKind::Softmax];
