//! OpenAI-style evolution strategy.
//!
//! Each generation samples `lambda` Gaussian directions, evaluates the
//! mirrored pair `theta + sigma*eps` / `theta - sigma*eps` on `eta` episodes
//! each, ranks all `2*lambda` mean scores jointly, and feeds the rank-
//! weighted sum of directions to Adam as an ascent direction.

mod adam;
mod rank;

pub use adam::{AdamConfig, AdamState};
pub use rank::{estimate_gradient, rank_normalize};

use crate::envs::{ConditionId, ConditionSpace, EnvError, Environment};
use crate::exec::Executor;
use crate::rng::{Purpose, StreamKey, StreamRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EsError {
    #[error("rank normalization needs at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("score {0} is NaN")]
    NanScore(usize),
    #[error("{what} has length {got}, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid ES configuration: {0}")]
    Config(String),
    #[error("parameter vector became non-finite at generation {0}")]
    NonFinite(u64),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    /// Perturbation standard deviation.
    pub sigma: f64,
    /// Number of mirrored pairs; the population is `2 * lambda`.
    pub lambda: usize,
    /// Episodes per offspring evaluation.
    pub eta: usize,
    pub adam: AdamConfig,
    /// Score the updated parent on `eta` uniformly drawn conditions every
    /// generation. These steps count toward the budget.
    pub evaluate_parent: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            sigma: 0.02,
            lambda: 20,
            eta: 10,
            adam: AdamConfig::default(),
            evaluate_parent: true,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<(), EsError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(EsError::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.lambda == 0 {
            return Err(EsError::Config("lambda must be >= 1".into()));
        }
        if self.eta == 0 {
            return Err(EsError::Config("eta must be >= 1".into()));
        }
        Ok(())
    }

    /// Upper bound on the environment steps one generation can consume.
    pub fn max_steps_per_generation(&self, episode_max: u64) -> u64 {
        let offspring = 2 * self.lambda as u64 * self.eta as u64;
        let parent = if self.evaluate_parent { self.eta as u64 } else { 0 };
        (offspring + parent) * episode_max
    }
}

/// The search center and optimizer state. `generation` counts completed
/// generations; all randomness of generation `g` is keyed by
/// `(seed, g, pair, episode)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EsState {
    pub theta: Vec<f64>,
    pub adam: AdamState,
    pub generation: u64,
    pub seed: u64,
}

impl EsState {
    /// Zero-initialized center.
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::from_theta(vec![0.0; dim], seed)
    }

    pub fn from_theta(theta: Vec<f64>, seed: u64) -> Self {
        let dim = theta.len();
        Self {
            theta,
            adam: AdamState::new(dim),
            generation: 0,
            seed,
        }
    }
}

/// The condition-selection hook used for offspring evaluation.
pub trait ConditionSelector {
    /// Called once per generation before any [`select`](Self::select).
    fn prepare(&mut self, space: &ConditionSpace);

    /// Draws `count` conditions for one mirrored pair.
    fn select(&self, space: &ConditionSpace, count: usize, rng: &mut StreamRng)
        -> Vec<ConditionId>;

    /// Commits the generation's episode outcomes (in evaluation order) and
    /// advances the selector's generation counter.
    fn observe(&mut self, observations: &[(ConditionId, f64)]);
}

/// Uniform draws over the whole grid: the standard, curriculum-free
/// selector.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformSelector;

impl ConditionSelector for UniformSelector {
    fn prepare(&mut self, _space: &ConditionSpace) {}

    fn select(
        &self,
        space: &ConditionSpace,
        count: usize,
        rng: &mut StreamRng,
    ) -> Vec<ConditionId> {
        (0..count).map(|_| space.sample(rng)).collect()
    }

    fn observe(&mut self, _observations: &[(ConditionId, f64)]) {}
}

/// Standard-normal directions for every pair of generation `generation`.
pub fn sample_perturbations(seed: u64, generation: u64, lambda: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..lambda)
        .map(|i| {
            let mut rng = StreamKey::new(seed, Purpose::Perturbation)
                .generation(generation)
                .index(i as u64)
                .rng();
            (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: u64,
    /// Environment steps consumed by this generation.
    pub steps: u64,
    /// Mean fitness of the updated parent, or NaN when not evaluated.
    pub parent_score: f64,
    pub offspring_mean: f64,
    pub offspring_max: f64,
}

/// Runs one generation and updates `state` in place.
pub fn run_generation<E, S>(
    state: &mut EsState,
    cfg: &EsConfig,
    selector: &mut S,
    env: &E,
    exec: &Executor,
) -> Result<GenerationLog, EsError>
where
    E: Environment + ?Sized,
    S: ConditionSelector + ?Sized,
{
    cfg.validate()?;
    let dim = state.theta.len();
    if env.param_count() != dim {
        return Err(EsError::ShapeMismatch {
            what: "parameter vector",
            expected: env.param_count(),
            got: dim,
        });
    }
    let g = state.generation + 1;
    let (lambda, eta) = (cfg.lambda, cfg.eta);
    let space = env.space();

    let eps = sample_perturbations(state.seed, g, lambda, dim);
    selector.prepare(space);
    let conditions: Vec<Vec<ConditionId>> = (0..lambda)
        .map(|i| {
            let mut rng = StreamKey::new(state.seed, Purpose::Conditions)
                .generation(g)
                .index(i as u64)
                .rng();
            selector.select(space, eta, &mut rng)
        })
        .collect();

    // offspring k < lambda is the + member of pair k, k >= lambda the -
    let offspring: Vec<Vec<f64>> = (0..2 * lambda)
        .map(|k| {
            let sign = if k < lambda { cfg.sigma } else { -cfg.sigma };
            let e = &eps[k % lambda];
            state.theta.iter().zip(e).map(|(t, e)| t + sign * e).collect()
        })
        .collect();

    let episodes = exec.map(2 * lambda * eta, |j| {
        let (k, e) = (j / eta, j % eta);
        env.run_episode(&offspring[k], conditions[k % lambda][e])
    });
    let episodes = episodes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut steps: u64 = episodes.iter().map(|r| r.steps).sum();
    let scores: Vec<f64> = episodes
        .chunks(eta)
        .map(|chunk| chunk.iter().map(|r| r.fitness).sum::<f64>() / eta as f64)
        .collect();

    let ranks = rank_normalize(&scores)?;
    let grad = estimate_gradient(&eps, &ranks)?;
    state.adam.ascend(&mut state.theta, &grad, &cfg.adam);
    if state.theta.iter().any(|v| !v.is_finite()) {
        return Err(EsError::NonFinite(g));
    }

    let parent_score = if cfg.evaluate_parent {
        let theta = &state.theta;
        let seed = state.seed;
        let parent = exec.map(eta, |e| {
            let mut rng = StreamKey::new(seed, Purpose::ParentEval)
                .generation(g)
                .episode(e as u64)
                .rng();
            env.run_random_episode(theta, &mut rng)
        });
        let parent = parent.into_iter().collect::<Result<Vec<_>, _>>()?;
        steps += parent.iter().map(|r| r.steps).sum::<u64>();
        parent.iter().map(|r| r.fitness).sum::<f64>() / eta as f64
    } else {
        f64::NAN
    };

    let observations: Vec<(ConditionId, f64)> = episodes
        .iter()
        .enumerate()
        .map(|(j, r)| (conditions[(j / eta) % lambda][j % eta], r.fitness))
        .collect();
    selector.observe(&observations);

    state.generation = g;
    Ok(GenerationLog {
        generation: g,
        steps,
        parent_score,
        offspring_mean: scores.iter().sum::<f64>() / scores.len() as f64,
        offspring_max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
