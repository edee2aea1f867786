//! Layer-wise class activation maps ("CAManim") and their ROAD evaluation.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and timing
//! live in the `camanim` companion crate.

#![no_std]

extern crate alloc;

pub mod backend;
pub mod cam;
pub mod error;
pub mod font;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod preprocess;
pub mod render;
pub mod resize;
pub mod road;
pub mod seeds;
pub mod tensor;

pub use backend::{Backend, BackwardTrace, ForwardTrace, LayerDescriptor, LayerId, LayerKind};
pub use cam::CamVariant;
pub use error::{Error, Result};
pub use pipeline::{run_layerwise, LayerSequence, SaliencyMap, SkipReason};
pub use road::{road_score, ybroad, RoadConfig, YbRoadSeries};
pub use tensor::{Map2, Tensor4};
