//! Episode-generating environments with enumerable condition grids.

mod doublepole;
mod synthetic;

pub use doublepole::{
    DoublePole, DoublePoleConfig, DoublePoleParams, DoublePoleState, THETA1_LITERAL_BOUND,
};
pub use synthetic::{SyntheticCondition, SyntheticEnv, OBSTACLE_TARGETS, SLOTS};

use crate::rng::StreamRng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("condition id {id} out of range (space has {total} conditions)")]
    ConditionOutOfRange { id: u32, total: usize },
    #[error("non-finite state {0:?}")]
    NonFiniteState([f64; 6]),
    #[error(transparent)]
    Net(#[from] crate::nets::NetError),
    #[error("parameter vector has length {got}, environment expects {expected}")]
    ParamLength { expected: usize, got: usize },
}

/// Index of one environmental condition in a finite grid.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ConditionId(pub u32);

impl std::fmt::Display for ConditionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    MaxSteps,
    PoleFell,
    CartOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub fitness: f64,
    pub steps: u64,
    pub termination: Termination,
}

/// A mixed-radix grid. The first dimension is the most significant digit,
/// so id 0 is the all-lowest corner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionSpace {
    dims: Vec<u32>,
    total: usize,
}

impl ConditionSpace {
    pub fn new(dims: Vec<u32>) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "empty grid dimension");
        let total = dims.iter().map(|&d| d as usize).product();
        Self { dims, total }
    }

    pub fn uniform(n_dims: usize, cardinality: u32) -> Self {
        Self::new(vec![cardinality; n_dims])
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn contains(&self, id: ConditionId) -> bool {
        (id.0 as usize) < self.total
    }

    pub fn check(&self, id: ConditionId) -> Result<(), EnvError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(EnvError::ConditionOutOfRange {
                id: id.0,
                total: self.total,
            })
        }
    }

    /// Per-dimension digits of `id`.
    pub fn decode(&self, id: ConditionId) -> Result<Vec<u32>, EnvError> {
        self.check(id)?;
        let mut rest = id.0;
        let mut digits = vec![0; self.dims.len()];
        for (digit, &d) in digits.iter_mut().zip(&self.dims).rev() {
            *digit = rest % d;
            rest /= d;
        }
        Ok(digits)
    }

    pub fn encode(&self, digits: &[u32]) -> Option<ConditionId> {
        if digits.len() != self.dims.len() {
            return None;
        }
        let mut id = 0u32;
        for (&digit, &d) in digits.iter().zip(&self.dims) {
            if digit >= d {
                return None;
            }
            id = id * d + digit;
        }
        Some(ConditionId(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ConditionId> {
        (0..self.total as u32).map(ConditionId)
    }

    pub fn sample(&self, rng: &mut StreamRng) -> ConditionId {
        ConditionId(rng.random_range(0..self.total as u32))
    }
}

/// Evenly spaced values over `[lo, hi]`, both endpoints included.
pub fn linspace(lo: f64, hi: f64, n: u32) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![(lo + hi) / 2.0],
        _ => {
            let step = (hi - lo) / f64::from(n - 1);
            (0..n).map(|k| lo + step * f64::from(k)).collect()
        }
    }
}

/// Anything the optimizer can evaluate a parameter vector on.
pub trait Environment: Sync {
    fn name(&self) -> &'static str;

    fn param_count(&self) -> usize;

    /// The training condition grid.
    fn space(&self) -> &ConditionSpace;

    /// Upper bound on the steps a single episode can consume.
    fn max_steps(&self) -> u64;

    fn run_episode(&self, params: &[f64], condition: ConditionId)
        -> Result<EpisodeResult, EnvError>;

    /// An episode under a condition drawn uniformly at random, used for
    /// post-evaluation. Defaults to a uniform grid draw.
    fn run_random_episode(
        &self,
        params: &[f64],
        rng: &mut StreamRng,
    ) -> Result<EpisodeResult, EnvError> {
        let id = self.space().sample(rng);
        self.run_episode(params, id)
    }

    /// The grid used for per-condition heatmaps.
    fn heatmap_space(&self) -> ConditionSpace {
        self.space().clone()
    }

    fn run_heatmap_episode(
        &self,
        params: &[f64],
        condition: ConditionId,
    ) -> Result<EpisodeResult, EnvError> {
        self.run_episode(params, condition)
    }
}
