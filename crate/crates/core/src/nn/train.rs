//! Builds and trains the desk-scale fixture model.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Layer, Sequential};
use super::ops::{Conv2d, Dense, OpNode, ParamGrads};
use super::synth::{make_synthetic_dataset, SynthSample, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const TRAIN_SAMPLES: usize = 200;
pub const HELD_OUT_SAMPLES: usize = 50;

/// Seed of the held-out set that accompanies a fixture trained with `seed`.
pub fn held_out_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_0F_F1C5
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = libm::sqrt(6.0 / fan_in as f64);
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn conv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> OpNode {
    let weight = he_uniform(rng, c_in * k * k, c_out * c_in * k * k);
    OpNode::Conv(Conv2d {
        weight: Tensor4::from_vec([c_out, c_in, k, k], weight).expect("sized above"),
        bias: vec![0.0; c_out],
        stride: 1,
        padding: 1,
    })
}

/// conv(1→4,3×3) → relu → maxpool(2) → conv(4→8,3×3) → relu → gap → dense(8→2) → softmax,
/// He-uniform initialised from `seed`. Convolutions use stride 1 and padding 1.
pub fn fixture_architecture(seed: u64) -> Sequential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv1 = conv(&mut rng, 1, 4, 3);
    let conv2 = conv(&mut rng, 4, 8, 3);
    let dense = OpNode::Dense(Dense { n_in: 8, n_out: 2, weight: he_uniform(&mut rng, 8, 16), bias: vec![0.0; 2] });
    let layers = vec![
        Layer::new("features.conv1", conv1),
        Layer::new("features.relu1", OpNode::Relu),
        Layer::new("features.pool1", OpNode::MaxPool { size: 2, stride: 2 }),
        Layer::new("features.conv2", conv2),
        Layer::new("features.relu2", OpNode::Relu),
        Layer::new("gap", OpNode::Gap),
        Layer::new("classifier.fc", dense),
        Layer::new("classifier.softmax", OpNode::Softmax),
    ];
    Sequential::new([1, 1, IMAGE_SIZE, IMAGE_SIZE], layers).expect("fixture architecture is well-formed")
}

fn apply(model: &mut Sequential, grads: &[Option<ParamGrads>], lr: f64) {
    for (layer, grad) in model.layers_mut().iter_mut().zip(grads) {
        match (&mut layer.op, grad) {
            (OpNode::Conv(c), Some(ParamGrads::Conv { weight, bias })) => {
                for (w, g) in c.weight.data_mut().iter_mut().zip(weight.data()) {
                    *w -= lr * g;
                }
                for (b, g) in c.bias.iter_mut().zip(bias) {
                    *b -= lr * g;
                }
            }
            (OpNode::Dense(d), Some(ParamGrads::Dense { weight, bias })) => {
                for (w, g) in d.weight.iter_mut().zip(weight) {
                    *w -= lr * g;
                }
                for (b, g) in d.bias.iter_mut().zip(bias) {
                    *b -= lr * g;
                }
            }
            _ => {}
        }
    }
}

/// Plain per-sample SGD on cross-entropy over [`TRAIN_SAMPLES`] synthetic
/// samples drawn from `seed`.
pub fn train_fixture(seed: u64, epochs: usize, lr: f64) -> Result<Sequential> {
    if epochs == 0 {
        return Err(Error::Precondition("epochs must be >= 1".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Precondition(format!("learning rate must be positive, got {lr}")));
    }
    let data = make_synthetic_dataset(seed, TRAIN_SAMPLES);
    let inputs: Vec<Tensor4> = data.iter().map(SynthSample::model_input).collect();
    let mut model = fixture_architecture(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (loss, grads) = model.loss_and_grads(&inputs[i], data[i].label)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            apply(&mut model, &grads, lr);
            if model.layers().iter().any(|l| l.op.validate().is_err()) {
                return Err(Error::TrainingDiverged { epoch });
            }
        }
    }
    Ok(model)
}

/// Fraction of `samples` the model classifies correctly.
pub fn accuracy(model: &Sequential, samples: &[SynthSample]) -> Result<f64> {
    let mut correct = 0usize;
    for s in samples {
        if model.predict(&s.model_input())? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

pub fn held_out_set(seed: u64) -> Vec<SynthSample> {
    make_synthetic_dataset(held_out_seed(seed), HELD_OUT_SAMPLES)
}
