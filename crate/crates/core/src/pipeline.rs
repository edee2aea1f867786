//! Runs a CAM at every layer, filters layers without 2-D extent, and applies
//! local (per-layer) and global (run-wide) min-max normalization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backend::{Backend, BackwardTrace, ForwardTrace, LayerDescriptor, LayerId};
use crate::cam::{CamContext, CamVariant};
use crate::error::{Error, Result};
use crate::resize::upsample_to_input;
use crate::tensor::{Map2, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// Output has no genuine 2-D extent; excluded from frames and statistics.
    NonSpatial,
    /// Raw map is identically zero. The layer is still retained.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub layer: LayerDescriptor,
    /// Post-ReLU CAM upsampled to input resolution.
    pub raw: Map2,
    pub local_norm: Map2,
    pub global_norm: Map2,
    pub flag: Option<SkipReason>,
}

impl SaliencyMap {
    pub fn is_retained(&self) -> bool {
        self.flag != Some(SkipReason::NonSpatial)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSequence {
    /// Every listed layer in execution order, skipped ones included.
    pub maps: Vec<SaliencyMap>,
    pub g_min: f64,
    pub g_max: f64,
}

impl LayerSequence {
    pub fn retained(&self) -> impl Iterator<Item = &SaliencyMap> {
        self.maps.iter().filter(|m| m.is_retained())
    }

    pub fn retained_count(&self) -> usize {
        self.retained().count()
    }

    /// Checks the normalization contract: exec order, local extrema 0 and 1
    /// on non-constant layers, a unique (up to exact ties) layer reaching
    /// global 1, and agreeing argmax across raw, local and global maps.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Precondition(msg));
        if self.maps.windows(2).any(|w| w[0].layer.exec_index >= w[1].layer.exec_index) {
            return fail("maps are not in increasing exec_index order".into());
        }
        if self.g_max < self.g_min {
            return fail(format!("g_max {} < g_min {}", self.g_max, self.g_min));
        }
        let (mut at_one, mut holding_max) = (0, 0);
        for m in self.retained() {
            let name = &m.layer.name;
            let (lo, hi) = m.raw.min_max();
            let (llo, lhi) = m.local_norm.min_max();
            if hi > lo && (llo != 0.0 || lhi != 1.0) {
                return fail(format!("{name}: local_norm spans [{llo}, {lhi}]"));
            }
            if hi == lo && lhi != 0.0 {
                return fail(format!("{name}: constant raw map has non-zero local_norm"));
            }
            if m.global_norm.data.iter().any(|&v| v == 1.0) {
                at_one += 1;
            }
            if hi == self.g_max {
                holding_max += 1;
            }
            let a = m.raw.argmax();
            if m.local_norm.argmax() != a || m.global_norm.argmax() != a {
                return fail(format!("{name}: argmax differs between raw and normalized maps"));
            }
        }
        let expected = if self.g_max > self.g_min { holding_max } else { 0 };
        if at_one != expected || (self.g_max > self.g_min && at_one == 0) {
            return fail(format!("{at_one} retained layers reach global_norm 1, expected {expected}"));
        }
        Ok(())
    }
}

/// True iff the output has two trailing spatial dims, both at least 2.
pub fn is_spatial(layer: &LayerDescriptor) -> bool {
    let s = &layer.out_shape;
    s.len() >= 3 && s[s.len() - 1] >= 2 && s[s.len() - 2] >= 2
}

pub fn normalize_local(raw: &Map2) -> Map2 {
    let (lo, hi) = raw.min_max();
    if hi > lo {
        raw.map(|v| (v - lo) / (hi - lo))
    } else {
        Map2::zeros(raw.height, raw.width)
    }
}

fn rescale(raw: &Map2, lo: f64, hi: f64, clamp: bool) -> Map2 {
    if hi > lo {
        raw.map(|v| {
            let x = (v - lo) / (hi - lo);
            if clamp {
                x.clamp(0.0, 1.0)
            } else {
                x
            }
        })
    } else {
        Map2::zeros(raw.height, raw.width)
    }
}

/// Fills `global_norm` of every map from the extrema of the retained raw
/// maps. Skipped layers are rescaled with the same extrema and clamped.
pub fn normalize_global(maps: Vec<SaliencyMap>) -> Result<LayerSequence> {
    let (g_min, g_max) = maps
        .iter()
        .filter(|m| m.is_retained())
        .map(|m| m.raw.min_max())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (lo, hi)| (a.min(lo), b.max(hi)));
    if g_min > g_max {
        return Err(Error::EmptySequence);
    }
    let maps = maps
        .into_iter()
        .map(|mut m| {
            m.global_norm = rescale(&m.raw, g_min, g_max, !m.is_retained());
            m
        })
        .collect();
    Ok(LayerSequence { maps, g_min, g_max })
}

/// Traces of one input with every layer captured.
pub struct LayerwiseRun<'a, B: Backend + ?Sized> {
    pub backend: &'a B,
    pub input: &'a Tensor4,
    pub target_class: usize,
    pub variant: CamVariant,
    pub seed: u64,
    pub layers: Vec<LayerDescriptor>,
    pub forward: ForwardTrace,
    pub backward: Option<BackwardTrace>,
}

impl<'a, B: Backend + ?Sized> LayerwiseRun<'a, B> {
    pub fn prepare(backend: &'a B, input: &'a Tensor4, target_class: usize, variant: CamVariant, seed: u64) -> Result<Self> {
        let layers = backend.list_layers()?;
        let num_classes = backend.num_classes();
        if target_class >= num_classes {
            return Err(Error::ClassRange { class: target_class, num_classes });
        }
        let ids: Vec<LayerId> = layers.iter().map(|l| l.id).collect();
        let forward = backend.forward_trace(input, &ids)?;
        let backward = if variant.needs_gradients() {
            Some(backend.backward_trace(&forward, target_class)?)
        } else {
            None
        };
        Ok(Self { backend, input, target_class, variant, seed, layers, forward, backward })
    }

    fn context(&self) -> CamContext<'_, B> {
        CamContext {
            backend: self.backend,
            input: self.input,
            target_class: self.target_class,
            forward: &self.forward,
            backward: self.backward.as_ref(),
            seed: self.seed,
        }
    }

    /// Raw and locally normalized map of one layer. `global_norm` is left
    /// equal to `local_norm` until [`normalize_global`] runs.
    pub fn layer(&self, layer: &LayerDescriptor) -> Result<SaliencyMap> {
        let [_, _, h, w] = self.input.shape();
        let small = self.context().layer_map(layer, self.variant)?;
        let raw = upsample_to_input(&small, h, w)?;
        let flag = if !is_spatial(layer) {
            Some(SkipReason::NonSpatial)
        } else if raw.data.iter().all(|&v| v == 0.0) {
            Some(SkipReason::Degenerate)
        } else {
            None
        };
        let local_norm = normalize_local(&raw);
        Ok(SaliencyMap { layer: layer.clone(), raw, global_norm: local_norm.clone(), local_norm, flag })
    }

    pub fn finish(maps: Vec<SaliencyMap>) -> Result<LayerSequence> {
        normalize_global(maps)
    }
}

/// One saliency map per listed layer, in execution order.
pub fn run_layerwise<B: Backend + ?Sized>(
    model: &B,
    input: &Tensor4,
    target_class: usize,
    variant: CamVariant,
    seed: u64,
) -> Result<LayerSequence> {
    let run = LayerwiseRun::prepare(model, input, target_class, variant, seed)?;
    let maps = run.layers.iter().map(|l| run.layer(l)).collect::<Result<Vec<_>>>()?;
    LayerwiseRun::<B>::finish(maps)
}
