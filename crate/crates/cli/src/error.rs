use std::path::PathBuf;

use fusion_core::FusionError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, an invalid or inconsistent configuration, or an unknown concept.
    #[error("{0}")]
    Usage(String),

    /// The backend, the provider or the pipeline failed while running.
    #[error(transparent)]
    Run(#[from] FusionError),

    #[error("cannot reach backend at {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: FusionError,
    },

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => crate::EXIT_USAGE,
            CliError::Run(_) | CliError::Connect { .. } | CliError::Output { .. } => {
                crate::EXIT_BACKEND
            }
        }
    }
}
