//! Reference CNN: kernels, a sequential model implementing [`crate::Backend`],
//! the synthetic dataset and the fixture trainer.

pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod synth;
pub mod train;
pub mod weights;

pub use model::{Layer, Sequential};
pub use ops::{op_backward, op_forward, Conv2d, Dense, OpCache, OpNode, ParamGrads};
pub use synth::{make_synthetic_dataset, BlobBox, SynthSample};
pub use train::{accuracy, fixture_architecture, held_out_set, train_fixture};
