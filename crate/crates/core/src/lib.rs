//! Neuroevolution with automated curriculum learning.
//!
//! The crate couples an OpenAI-style evolution strategy (mirrored Gaussian
//! perturbations, rank-based fitness shaping, Adam ascent on the search
//! center) with a condition selector that ranks environmental conditions by
//! recent performance and draws evaluation episodes from difficulty bins.
//!
//! Modules:
//! - [`nets`]: flat-parameter MLP and LSTM controllers.
//! - [`envs`]: the long double-pole balancing task and a synthetic
//!   five-slot benchmark, each with an enumerable condition grid.
//! - [`es`]: the optimizer itself.
//! - [`curriculum`]: difficulty-binned condition selection.
//! - [`harness`]: replications, checkpoints, post-evaluation, heatmaps
//!   and the statistics used to compare methods.
//! - [`config`]: the plain-text experiment configuration format.
//!
//! Episode batches are evaluated through [`exec::Executor`], which uses a
//! rayon pool when the `parallel` feature is enabled (the default) and a
//! plain loop otherwise. Results never depend on the worker count.

pub mod config;
pub mod curriculum;
pub mod envs;
pub mod es;
pub mod exec;
pub mod harness;
pub mod nets;
pub mod rng;

pub use config::ExperimentConfig;
pub use envs::{ConditionId, EpisodeResult, Environment, Termination};
pub use es::{EsConfig, EsState};
pub use exec::Executor;
pub use nets::{NetworkKind, NetworkSpec, RecurrentState};

/// Version string embedded in every artifact header.
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
