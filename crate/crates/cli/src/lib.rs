//! Command implementations behind the `mled` binary.
//!
//! Every command is deterministic given its resolved config, the cache and
//! the dataset bytes. Only the remote provider touches the network.

pub mod commands;
pub mod config;
pub mod manifest;

use mled_core::enhancer::EnhancerError;
use mled_core::graph::GraphError;
use mled_core::model::ModelError;
use mled_core::numerics::NumericsError;
use mled_core::training::TrainError;

pub use commands::*;
pub use config::{resolve_config, Overrides, ProviderKind, RunConfig};
pub use manifest::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Provider(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Load { .. } | GraphError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EnhancerError> for CliError {
    fn from(e: EnhancerError) -> Self {
        match e {
            EnhancerError::Transport { .. } | EnhancerError::Missing { .. } => CliError::Provider(e.to_string()),
            EnhancerError::Io(_) => CliError::Io(e.to_string()),
            EnhancerError::Integrity { .. } | EnhancerError::DimMismatch { .. } => CliError::Validation(e.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::Io(_) | NumericsError::Checkpoint(_) => CliError::Io(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Numerics(n) => n.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } | TrainError::Step { .. } => CliError::Numeric(e.to_string()),
            TrainError::Checkpoint { .. } => CliError::Io(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Graph(g) => g.into(),
            TrainError::Config(_) | TrainError::EmptySplit(_) | TrainError::Metrics(_) => {
                CliError::Validation(e.to_string())
            }
        }
    }
}
