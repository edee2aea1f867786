use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::ops::{op_backward, op_forward, softmax, OpCache, OpNode, ParamGrads};
use crate::backend::{Backend, BackwardTrace, ForwardTrace, LayerDescriptor, LayerId, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: OpNode,
}

impl Layer {
    pub fn new(name: impl Into<String>, op: OpNode) -> Self {
        Self { name: name.into(), op }
    }
}

/// A feed-forward chain of [`OpNode`]s. Layer ids are execution indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    input_shape: [usize; 4],
    layers: Vec<Layer>,
    shapes: Vec<[usize; 4]>,
}

impl Sequential {
    /// Validates every op and the shape chain. An empty layer list is
    /// accepted here and reported by [`Backend::list_layers`].
    pub fn new(input_shape: [usize; 4], layers: Vec<Layer>) -> Result<Self> {
        if input_shape[0] != 1 {
            return Err(Error::Precondition("batch size must be 1".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut shape = input_shape;
        for layer in &layers {
            layer.op.validate()?;
            shape = layer.op.output_shape(shape)?;
            shapes.push(shape);
        }
        Ok(Self { input_shape, layers, shapes })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_shapes(&self) -> &[[usize; 4]] {
        &self.shapes
    }

    /// Index of the layer whose output holds the raw logits.
    fn logit_layer(&self) -> Result<usize> {
        match self.layers.last() {
            None => Err(Error::EmptyModel),
            Some(l) if l.op.kind() == LayerKind::Softmax && self.layers.len() >= 2 => Ok(self.layers.len() - 2),
            Some(_) => Ok(self.layers.len() - 1),
        }
    }

    fn check_input(&self, input: &Tensor4) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::EmptyModel);
        }
        if input.shape() != self.input_shape {
            return Err(Error::InputShape { expected: self.input_shape, found: input.shape() });
        }
        Ok(())
    }

    /// Runs every layer; `outputs[i]` is the output of layer `i`.
    fn run(&self, input: &Tensor4, patch: Option<(usize, &dyn Fn(&mut Tensor4))>) -> Result<(Vec<Tensor4>, Vec<OpCache>)> {
        self.check_input(input)?;
        let mut outputs: Vec<Tensor4> = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let (mut y, cache) = op_forward(&layer.op, x)?;
            if let Some((at, f)) = patch {
                if at == i {
                    f(&mut y);
                    y.expect_shape(self.shapes[i])?;
                }
            }
            outputs.push(y);
            caches.push(cache);
        }
        Ok((outputs, caches))
    }

    fn logits_from(&self, outputs: &[Tensor4]) -> Result<Vec<f64>> {
        Ok(outputs[self.logit_layer()?].data().to_vec())
    }

    /// Cross-entropy loss of one sample and the parameter gradient of every layer.
    pub fn loss_and_grads(&self, input: &Tensor4, label: usize) -> Result<(f64, Vec<Option<ParamGrads>>)> {
        let (outputs, caches) = self.run(input, None)?;
        let logit_at = self.logit_layer()?;
        let logits = outputs[logit_at].data();
        if label >= logits.len() {
            return Err(Error::ClassRange { class: label, num_classes: logits.len() });
        }
        let probs = softmax(logits);
        let loss = -libm::log(probs[label].max(f64::MIN_POSITIVE));
        let mut upstream = Tensor4::zeros(outputs[logit_at].shape());
        for (i, p) in probs.iter().enumerate() {
            upstream.data_mut()[i] = p - if i == label { 1.0 } else { 0.0 };
        }
        let mut grads = vec![None; self.layers.len()];
        for i in (0..=logit_at).rev() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let (gi, gp) = op_backward(&self.layers[i].op, x, &caches[i], &upstream)?;
            grads[i] = gp;
            upstream = gi;
        }
        Ok((loss, grads))
    }

    pub fn predict(&self, input: &Tensor4) -> Result<usize> {
        let logits = self.logits(input)?;
        Ok(argmax(&logits))
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Backend for Sequential {
    fn list_layers(&self) -> Result<Vec<LayerDescriptor>> {
        if self.layers.is_empty() {
            return Err(Error::EmptyModel);
        }
        Ok(self
            .layers
            .iter()
            .zip(&self.shapes)
            .enumerate()
            .map(|(i, (layer, shape))| {
                let kind = layer.op.kind();
                let out_shape = match kind {
                    LayerKind::Dense | LayerKind::Softmax => vec![shape[0], shape[1] * shape[2] * shape[3]],
                    _ => shape.to_vec(),
                };
                LayerDescriptor {
                    id: LayerId(i as u32),
                    name: layer.name.clone(),
                    kind,
                    exec_index: i,
                    out_shape,
                    param_count: layer.op.param_count(),
                }
            })
            .collect())
    }

    fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    fn num_classes(&self) -> usize {
        self.logit_layer().map(|i| self.shapes[i][1] * self.shapes[i][2] * self.shapes[i][3]).unwrap_or(0)
    }

    fn forward_trace(&self, input: &Tensor4, capture: &[LayerId]) -> Result<ForwardTrace> {
        for id in capture {
            if id.0 as usize >= self.layers.len() {
                return Err(Error::UnknownLayer(id.0));
            }
        }
        let (outputs, _) = self.run(input, None)?;
        let logits = self.logits_from(&outputs)?;
        let probabilities = softmax(&logits);
        let activations: BTreeMap<LayerId, Tensor4> =
            capture.iter().map(|&id| (id, outputs[id.0 as usize].clone())).collect();
        let mut saved = Vec::with_capacity(outputs.len() + 1);
        saved.push(input.clone());
        saved.extend(outputs);
        Ok(ForwardTrace { logits, probabilities, activations, saved })
    }

    fn backward_trace(&self, forward: &ForwardTrace, target_class: usize) -> Result<BackwardTrace> {
        if forward.saved.len() != self.layers.len() + 1 {
            return Err(Error::Cache("forward trace was not produced by this model"));
        }
        let num_classes = self.num_classes();
        if target_class >= num_classes {
            return Err(Error::ClassRange { class: target_class, num_classes });
        }
        let logit_at = self.logit_layer()?;
        let mut gradients = BTreeMap::new();
        // layers downstream of the logits do not influence the logit
        for (&id, act) in &forward.activations {
            if id.0 as usize > logit_at {
                gradients.insert(id, Tensor4::zeros(act.shape()));
            }
        }
        let mut upstream = Tensor4::zeros(self.shapes[logit_at]);
        upstream.data_mut()[target_class] = 1.0;
        for i in (0..=logit_at).rev() {
            let id = LayerId(i as u32);
            if forward.activations.contains_key(&id) {
                gradients.insert(id, upstream.clone());
            }
            if i == 0 || forward.activations.keys().all(|k| (k.0 as usize) >= i) {
                break;
            }
            let x = &forward.saved[i];
            let cache = match &self.layers[i].op {
                OpNode::MaxPool { .. } | OpNode::Softmax => op_forward(&self.layers[i].op, x)?.1,
                _ => OpCache::None,
            };
            upstream = op_backward(&self.layers[i].op, x, &cache, &upstream)?.0;
        }
        Ok(BackwardTrace { target_class, gradients })
    }

    fn forward_patched(&self, input: &Tensor4, layer: LayerId, patch: &dyn Fn(&mut Tensor4)) -> Result<Vec<f64>> {
        let at = layer.0 as usize;
        if at >= self.layers.len() {
            return Err(Error::UnknownLayer(layer.0));
        }
        let (outputs, _) = self.run(input, Some((at, patch)))?;
        self.logits_from(&outputs)
    }
}
