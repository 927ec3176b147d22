use std::path::{Path, PathBuf};

use thiserror::Error;

use hallucinate::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for configuration and I/O problems, 1 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                CoreError::UnknownObjective(_)
                | CoreError::InvalidParams(_)
                | CoreError::DimensionMismatch { .. }
                | CoreError::NonFinite
                | CoreError::UnsupportedDimension(_) => 2,
                _ => 1,
            },
        }
    }
}
