//! Resolves the `--model` argument to a backend.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use camanim_core::nn::{train_fixture, weights, Sequential};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

pub const FIXTURE_SEED: u64 = 7;
pub const FIXTURE_EPOCHS: usize = 30;
pub const FIXTURE_LR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    /// The reference CNN trained with the fixed fixture recipe.
    Fixture,
    /// A CAMFIX1 weight file.
    Weights(PathBuf),
    /// An external backend adapter; none ship with this build.
    Adapter(String),
}

impl FromStr for ModelSpec {
    type Err = AppError;

    fn from_str(s: &str) -> AppResult<Self> {
        if s == "fixture" {
            Ok(ModelSpec::Fixture)
        } else if let Some(id) = s.strip_prefix("adapter:") {
            Ok(ModelSpec::Adapter(id.to_string()))
        } else if s.is_empty() {
            Err(AppError::Config("empty model specification".into()))
        } else {
            Ok(ModelSpec::Weights(PathBuf::from(s)))
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Fixture => f.write_str("fixture"),
            ModelSpec::Weights(p) => write!(f, "{}", p.display()),
            ModelSpec::Adapter(id) => write!(f, "adapter:{id}"),
        }
    }
}

pub struct LoadedModel {
    pub model: Sequential,
    /// Short name used in reports.
    pub name: String,
    /// SHA-256 of the serialized weights.
    pub weights_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_weights(path: &Path) -> AppResult<Sequential> {
    let bytes = std::fs::read(path).map_err(AppError::io(path))?;
    Ok(weights::from_bytes(&bytes)?)
}

pub fn load_model(spec: &ModelSpec) -> AppResult<LoadedModel> {
    let (model, name) = match spec {
        ModelSpec::Fixture => (train_fixture(FIXTURE_SEED, FIXTURE_EPOCHS, FIXTURE_LR)?, "fixture".to_string()),
        ModelSpec::Weights(path) => {
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "weights".into());
            (load_weights(path)?, name)
        }
        ModelSpec::Adapter(id) => {
            return Err(AppError::Config(format!(
                "adapter backend '{id}' is not available; use 'fixture' or a CAMFIX1 weight file"
            )));
        }
    };
    let weights_sha256 = sha256_hex(&weights::to_bytes(&model));
    Ok(LoadedModel { model, name, weights_sha256 })
}
