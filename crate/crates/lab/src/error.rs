use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// Rejected before any work starts; maps to exit code 1.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rapl_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Format {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("missing artifact {0}; run `{1}` first")]
    MissingArtifact(PathBuf, &'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type LabResult<T> = Result<T, LabError>;

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, line: usize, detail: impl ToString) -> Self {
        LabError::Format {
            path: path.to_path_buf(),
            line,
            detail: detail.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 1,
            _ => 2,
        }
    }
}
