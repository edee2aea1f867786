use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{0}")]
    Channel(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] camanim_core::Error),
}

impl AppError {
    /// Short machine-readable category used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            AppError::Io { .. } => "io",
            AppError::Decode { .. } => "decode",
            AppError::Channel(_) => "channel",
            AppError::Config(_) => "config",
            AppError::Encode { .. } => "encode",
            AppError::Core(_) => "engine",
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
        move |source| AppError::Io { path: path.to_path_buf(), source }
    }
}

pub type AppResult<T> = std::result::Result<T, AppError>;
