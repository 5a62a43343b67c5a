use hcn_core::image::ImageError;
use hcn_core::network::{CheckpointError, ModelError};
use hcn_core::training::TrainError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Io(String),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Image(#[from] ImageError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Train(#[from] TrainError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Image(_) => "image",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Model(_) => "model",
            CliError::Train(_) => "train",
        }
    }

    /// `error[<kind>]: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.kind(), msg.trim())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
