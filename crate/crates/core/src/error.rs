use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reward-learning pipeline.
///
/// Every variant maps onto a short machine-readable category via
/// [`Error::category`], which the CLI prints on failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("missing artifact {path} (produced by stage `{stage}`)")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("malformed file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Divergence(_) => "divergence",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
