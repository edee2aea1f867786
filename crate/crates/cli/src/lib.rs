//! File I/O, rendering and reporting around `camanim-core`.

pub mod anim;
pub mod bench;
pub mod config;
pub mod error;
pub mod imageio;
pub mod model;
pub mod report;
pub mod run;

pub use config::RunConfig;
pub use error::{AppError, AppResult};
