use alloc::format;

use super::{plane_count, planes, WeightedStack};
use crate::error::{Error, Result};
use crate::tensor::{Map2, Tensor4};

pub enum CamInput<'a> {
    /// `relu(Σ_k alpha_k · A_k)`
    Weights { alpha: &'a [f64], act: &'a Tensor4 },
    /// `relu(Σ_k map_k)`
    Stack(&'a WeightedStack),
    /// `relu(projection)`
    Projection(Map2),
}

pub fn cam_assemble(input: CamInput<'_>) -> Result<Map2> {
    let relu = |v: f64| if v > 0.0 { v } else { 0.0 };
    match input {
        CamInput::Weights { alpha, act } => {
            if alpha.len() != plane_count(act) {
                return Err(Error::Shape(format!(
                    "{} weights for {} channels",
                    alpha.len(),
                    plane_count(act)
                )));
            }
            let (h, w) = act.hw();
            let mut sum = Map2::zeros(h, w);
            for (a, plane) in alpha.iter().zip(planes(act)) {
                for (s, v) in sum.data.iter_mut().zip(plane) {
                    *s += a * v;
                }
            }
            Ok(sum.map(relu))
        }
        CamInput::Stack(stack) => {
            let (h, w) = stack.maps.hw();
            let mut sum = Map2::zeros(h, w);
            for plane in planes(&stack.maps) {
                for (s, v) in sum.data.iter_mut().zip(plane) {
                    *s += v;
                }
            }
            Ok(sum.map(relu))
        }
        CamInput::Projection(p) => Ok(p.map(relu)),
    }
}
