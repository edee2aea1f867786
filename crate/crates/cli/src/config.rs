//! Resolved run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use camanim_core::render::NormMode;
use camanim_core::road::ScoreKind;
use camanim_core::CamVariant;
use serde::Serialize;

use crate::error::{AppError, AppResult};
use crate::imageio::Normalization;
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetClass {
    Index(usize),
    Argmax,
}

impl FromStr for TargetClass {
    type Err = AppError;

    fn from_str(s: &str) -> AppResult<Self> {
        if s.eq_ignore_ascii_case("argmax") {
            return Ok(TargetClass::Argmax);
        }
        s.parse()
            .map(TargetClass::Index)
            .map_err(|_| AppError::Config(format!("target class must be a non-negative integer or 'argmax', got '{s}'")))
    }
}

impl fmt::Display for TargetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetClass::Index(i) => write!(f, "{i}"),
            TargetClass::Argmax => f.write_str("argmax"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormSelection {
    Local,
    Global,
    Both,
}

impl NormSelection {
    pub fn modes(self) -> Vec<NormMode> {
        match self {
            NormSelection::Local => vec![NormMode::Local],
            NormSelection::Global => vec![NormMode::Global],
            NormSelection::Both => vec![NormMode::Local, NormMode::Global],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSelection {
    Probability,
    Logit,
}

impl From<ScoreSelection> for ScoreKind {
    fn from(s: ScoreSelection) -> Self {
        match s {
            ScoreSelection::Probability => ScoreKind::Probability,
            ScoreSelection::Logit => ScoreKind::Logit,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub image_path: PathBuf,
    pub model: ModelSpec,
    pub cam: CamVariant,
    pub target_class: TargetClass,
    pub norm: NormSelection,
    pub fps: f64,
    pub alpha: f64,
    pub thresholds: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub trials: usize,
    pub include_skipped: bool,
    pub caption: bool,
    pub out_dir: PathBuf,
    pub normalization: Normalization,
    pub score: ScoreSelection,
}

impl RunConfig {
    pub fn validate(&self) -> AppResult<()> {
        let bad = |m: String| Err(AppError::Config(m));
        if self.thresholds.is_empty() {
            return bad("at least one threshold is required".into());
        }
        if self.thresholds.iter().any(|p| !(*p > 0.0 && *p < 100.0)) {
            return bad(format!("thresholds must lie in (0, 100): {:?}", self.thresholds));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("thresholds must be strictly increasing: {:?}", self.thresholds));
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std must be >= 0, got {}", self.noise_std));
        }
        Ok(())
    }

    /// Seed of trial `t`: trials repeat the run with incremented seeds.
    pub fn trial_seed(&self, t: usize) -> u64 {
        self.seed.wrapping_add(t as u64)
    }
}

/// Parses a comma-separated list of numbers.
pub fn parse_list(s: &str) -> AppResult<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| AppError::Config(format!("'{p}' is not a number in list '{s}'"))))
        .collect()
}
