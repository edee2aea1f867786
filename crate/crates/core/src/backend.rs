//! The model-introspection contract every backend satisfies.
//!
//! A backend enumerates its layers in forward execution order, records
//! activations during a forward pass, and returns gradients of a raw class
//! logit with respect to those activations. The reference CNN in
//! [`crate::nn`] is one implementation; adapters for other engines only need
//! to implement [`Backend`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::Result;
use crate::tensor::Tensor4;

/// Stable identifier of a layer inside one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerId(pub u32);

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Relu,
    MaxPool,
    Gap,
    Dense,
    Softmax,
    Other,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Gap => "gap",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
            LayerKind::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDescriptor {
    pub id: LayerId,
    pub name: String,
    pub kind: LayerKind,
    pub exec_index: usize,
    pub out_shape: Vec<usize>,
    pub param_count: usize,
}

/// Trainable scalars of a square `kernel`×`kernel` convolution with bias.
pub const fn conv_param_count(kernel: usize, c_in: usize, c_out: usize) -> usize {
    kernel * kernel * c_in * c_out + c_out
}

/// Trainable scalars of an affine layer with bias.
pub const fn dense_param_count(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

pub fn param_count(layer: &LayerDescriptor) -> usize {
    layer.param_count
}

/// Result of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Captured activations, keyed by layer.
    pub activations: BTreeMap<LayerId, Tensor4>,
    /// Backend-private tensors needed to run the backward pass.
    pub saved: Vec<Tensor4>,
}

/// Gradients of the raw logit of `target_class` with respect to each
/// captured activation.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTrace {
    pub target_class: usize,
    pub gradients: BTreeMap<LayerId, Tensor4>,
}

pub trait Backend {
    /// Layers sorted by execution order.
    fn list_layers(&self) -> Result<Vec<LayerDescriptor>>;

    /// Expected input shape, batch dimension included.
    fn input_shape(&self) -> [usize; 4];

    fn num_classes(&self) -> usize;

    fn forward_trace(&self, input: &Tensor4, capture: &[LayerId]) -> Result<ForwardTrace>;

    /// Differentiates the raw logit `Y[target_class]`, not the probability.
    fn backward_trace(&self, forward: &ForwardTrace, target_class: usize) -> Result<BackwardTrace>;

    /// Re-runs the forward pass, letting `patch` edit the output of `layer`
    /// before the rest of the network consumes it. Returns the logits.
    fn forward_patched(
        &self,
        input: &Tensor4,
        layer: LayerId,
        patch: &dyn Fn(&mut Tensor4),
    ) -> Result<Vec<f64>>;

    fn logits(&self, input: &Tensor4) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input, &[])?.logits)
    }

    fn total_params(&self) -> Result<usize> {
        Ok(self.list_layers()?.iter().map(param_count).sum())
    }
}
