//! Per-layer class activation maps: a ReLU'd weighted sum of a layer's
//! channel activations, with the weighting chosen by [`CamVariant`].

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::backend::{Backend, BackwardTrace, ForwardTrace, LayerDescriptor, LayerId};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{Map2, Tensor4};

mod assemble;
mod eigen;
mod weights;

pub use assemble::{cam_assemble, CamInput};
pub use eigen::{eigen_weighted_maps, symmetric_eigen};
pub use weights::{
    elementwise_weighted_maps, gradient_channel_weights, perturbation_channel_weights, random_channel_weights,
};

/// Added to every denominator of the weighting formulas.
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CamVariant {
    GradCam,
    GradCamPlusPlus,
    XGradCam,
    HiResCam,
    GradCamElementWise,
    LayerCam,
    EigenCam,
    EigenGradCam,
    ScoreCam,
    AblationCam,
    RandomCam,
}

impl CamVariant {
    pub const ALL: [CamVariant; 11] = [
        CamVariant::GradCam,
        CamVariant::GradCamPlusPlus,
        CamVariant::XGradCam,
        CamVariant::HiResCam,
        CamVariant::GradCamElementWise,
        CamVariant::LayerCam,
        CamVariant::EigenCam,
        CamVariant::EigenGradCam,
        CamVariant::ScoreCam,
        CamVariant::AblationCam,
        CamVariant::RandomCam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CamVariant::GradCam => "GradCAM",
            CamVariant::GradCamPlusPlus => "GradCAMpp",
            CamVariant::XGradCam => "XGradCAM",
            CamVariant::HiResCam => "HiResCAM",
            CamVariant::GradCamElementWise => "GradCAMElementWise",
            CamVariant::LayerCam => "LayerCAM",
            CamVariant::EigenCam => "EigenCAM",
            CamVariant::EigenGradCam => "EigenGradCAM",
            CamVariant::ScoreCam => "ScoreCAM",
            CamVariant::AblationCam => "AblationCAM",
            CamVariant::RandomCam => "RandomCAM",
        }
    }

    pub fn needs_gradients(self) -> bool {
        !matches!(
            self,
            CamVariant::EigenCam | CamVariant::RandomCam | CamVariant::ScoreCam | CamVariant::AblationCam
        )
    }

    pub fn needs_model_reruns(self) -> bool {
        matches!(self, CamVariant::ScoreCam | CamVariant::AblationCam)
    }
}

impl fmt::Display for CamVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CamVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: alloc::string::String =
            s.replace("++", "pp").chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect();
        let key = key.replace("plusplus", "pp");
        CamVariant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(alloc::format!("unknown CAM variant '{s}'")))
    }
}

/// Per-channel weighted maps for one layer (the summands of the CAM).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedStack {
    pub maps: Tensor4,
    pub layer_id: LayerId,
    pub variant: CamVariant,
}

/// Everything needed to compute a CAM at any layer of one traced input.
pub struct CamContext<'a, B: Backend + ?Sized> {
    pub backend: &'a B,
    pub input: &'a Tensor4,
    pub target_class: usize,
    pub forward: &'a ForwardTrace,
    pub backward: Option<&'a BackwardTrace>,
    pub seed: u64,
}

impl<B: Backend + ?Sized> CamContext<'_, B> {
    /// Post-ReLU map at the layer's own spatial resolution.
    pub fn layer_map(&self, layer: &LayerDescriptor, variant: CamVariant) -> Result<Map2> {
        let act = self.forward.activations.get(&layer.id).ok_or(Error::UnknownLayer(layer.id.0))?;
        let grad = || -> Result<&Tensor4> {
            self.backward
                .and_then(|b| b.gradients.get(&layer.id))
                .ok_or(Error::Cache("variant needs a backward trace for this layer"))
        };
        let input = match variant {
            CamVariant::GradCam | CamVariant::GradCamPlusPlus | CamVariant::XGradCam => {
                let alpha = gradient_channel_weights(variant, act, grad()?)?;
                return cam_assemble(CamInput::Weights { alpha: &alpha, act });
            }
            CamVariant::HiResCam | CamVariant::GradCamElementWise | CamVariant::LayerCam => {
                let stack = elementwise_weighted_maps(variant, act, grad()?, layer.id)?;
                return cam_assemble(CamInput::Stack(&stack));
            }
            CamVariant::EigenCam => CamInput::Projection(eigen_weighted_maps(variant, act, None)?),
            CamVariant::EigenGradCam => CamInput::Projection(eigen_weighted_maps(variant, act, Some(grad()?))?),
            CamVariant::ScoreCam | CamVariant::AblationCam => {
                let alpha = perturbation_channel_weights(
                    variant,
                    self.backend,
                    self.input,
                    self.target_class,
                    act,
                    layer.id,
                )?;
                return cam_assemble(CamInput::Weights { alpha: &alpha, act });
            }
            CamVariant::RandomCam => {
                let alpha = random_channel_weights(act.channels(), layer_seed(self.seed, layer))?;
                return cam_assemble(CamInput::Weights { alpha: &alpha, act });
            }
        };
        cam_assemble(input)
    }
}

/// Seed used by RandomCAM at `layer` for a run seeded with `seed`.
pub fn layer_seed(seed: u64, layer: &LayerDescriptor) -> u64 {
    seeds::derive(seed, layer.exec_index as u64)
}

pub(crate) fn check_same_shape(act: &Tensor4, grad: &Tensor4) -> Result<()> {
    if act.shape() != grad.shape() {
        return Err(Error::Shape(alloc::format!(
            "activation {:?} and gradient {:?} differ",
            act.shape(),
            grad.shape()
        )));
    }
    Ok(())
}

pub(crate) fn plane_count(t: &Tensor4) -> usize {
    t.shape()[0] * t.shape()[1]
}

pub(crate) fn planes(t: &Tensor4) -> impl Iterator<Item = &[f64]> {
    let [_, _, h, w] = t.shape();
    t.data().chunks_exact(h * w)
}

pub(crate) fn collect_planes(t: &Tensor4) -> Vec<&[f64]> {
    planes(t).collect()
}
