//! Experiment orchestration: replications, checkpoints, post-evaluation,
//! heatmaps and method comparison.

pub mod checkpoint;
pub mod eval;
pub mod report;
pub mod run;
pub mod stats;

pub use checkpoint::{BestAgent, RunCheckpoint};
pub use eval::{heatmap_difference, heatmap_evaluate, post_evaluate, PostEval};
pub use report::{compare, ArtifactHeader, PostEvalRecord, StatsReport};
pub use run::{run_experiment, run_replication, ReplicationResult, RunOptions, RunSelector};

use crate::config::ConfigError;
use crate::envs::EnvError;
use crate::es::EsError;
use stats::StatsError;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path} was written with config {found}, current config hashes to {expected}")]
    ConfigMismatch {
        path: String,
        found: String,
        expected: String,
    },
    #[error("replication {replication}: {source}")]
    Es {
        replication: usize,
        #[source]
        source: EsError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Invalid(String),
}

impl HarnessError {
    pub(crate) fn io(context: impl std::fmt::Display, path: &Path) -> impl FnOnce(std::io::Error) -> Self {
        let context = format!("{context} {}", path.display());
        move |source| HarnessError::Io { context, source }
    }

    pub(crate) fn format(path: &Path, message: impl Into<String>) -> Self {
        HarnessError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}
