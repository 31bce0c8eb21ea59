//! Post-evaluation and per-condition heatmaps.

use super::HarnessError;
use crate::envs::{ConditionId, Environment};
use crate::exec::Executor;
use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, PartialEq)]
pub struct PostEval {
    pub mean: f64,
    pub episodes: Vec<f64>,
}

/// Scores `theta` on `n_episodes` uniformly drawn conditions. Episode `e`
/// always uses the same stream for a given seed, so a longer evaluation
/// extends a shorter one.
pub fn post_evaluate<E: Environment + ?Sized>(
    theta: &[f64],
    env: &E,
    n_episodes: usize,
    seed: u64,
    exec: &Executor,
) -> Result<PostEval, HarnessError> {
    if n_episodes == 0 {
        return Err(HarnessError::Invalid("post-evaluation needs at least one episode".into()));
    }
    let results = exec.map(n_episodes, |e| {
        let mut rng = StreamKey::new(seed, Purpose::PostEval).episode(e as u64).rng();
        env.run_random_episode(theta, &mut rng)
    });
    let episodes = results
        .into_iter()
        .map(|r| r.map(|r| r.fitness))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PostEval {
        mean: episodes.iter().sum::<f64>() / n_episodes as f64,
        episodes,
    })
}

/// Fitness of every checkpoint on every heatmap condition, indexed
/// `[condition][checkpoint]`.
pub fn heatmap_evaluate<E: Environment + ?Sized>(
    thetas: &[Vec<f64>],
    env: &E,
    exec: &Executor,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    let n = env.heatmap_space().total();
    let k = thetas.len();
    let flat = exec.map(n * k, |j| {
        env.run_heatmap_episode(&thetas[j % k], ConditionId((j / k) as u32))
            .map(|r| r.fitness)
    });
    let flat = flat.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(flat.chunks(k.max(1)).map(<[f64]>::to_vec).take(n).collect())
}

/// Element-wise `a - b` of two heatmaps of the same shape.
pub fn heatmap_difference(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, HarnessError> {
    let shape = |m: &[Vec<f64>]| (m.len(), m.first().map_or(0, Vec::len));
    if shape(a) != shape(b) || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(HarnessError::Invalid(format!(
            "heatmap shapes differ: {:?} vs {:?}",
            shape(a),
            shape(b)
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{DoublePole, DoublePoleConfig, SyntheticEnv};

    #[test]
    fn single_episode_mean() {
        let env = SyntheticEnv::new();
        let theta = vec![0.1, 0.2, -0.3, 0.0, 0.5];
        let r = post_evaluate(&theta, &env, 1, 9, &Executor::sequential()).unwrap();
        assert_eq!(r.episodes.len(), 1);
        assert_eq!(r.mean, r.episodes[0]);
    }

    #[test]
    fn longer_run_extends_shorter() {
        let env = DoublePole::new(DoublePoleConfig::default());
        let theta: Vec<f64> = (0..env.param_count()).map(|i| ((i % 7) as f64 - 3.0) * 0.05).collect();
        let exec = Executor::sequential();
        let short = post_evaluate(&theta, &env, 8, 3, &exec).unwrap();
        let long = post_evaluate(&theta, &env, 16, 3, &exec).unwrap();
        assert_eq!(short.episodes[..], long.episodes[..8]);
        let par = post_evaluate(&theta, &env, 16, 3, &Executor::new(3)).unwrap();
        assert_eq!(par, long);
    }

    #[test]
    fn heatmap_shape_bounds_and_consistency() {
        let env = DoublePole::new(DoublePoleConfig::default());
        let dim = env.param_count();
        let a: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.37).sin() * 0.3).collect();
        let thetas = vec![vec![0.0; dim], a.clone()];
        let m = heatmap_evaluate(&thetas, &env, &Executor::new(2)).unwrap();
        assert_eq!(m.len(), 729);
        assert!(m.iter().all(|row| row.len() == 2));
        assert!(m.iter().flatten().all(|&f| (0.0..=1000.0).contains(&f)));
        for id in [0u32, 364, 728] {
            let direct = env.run_heatmap_episode(&a, ConditionId(id)).unwrap().fitness;
            assert_eq!(m[id as usize][1], direct);
        }
        let zero = heatmap_difference(&m, &m).unwrap();
        assert!(zero.iter().flatten().all(|&d| d == 0.0));
        assert!(heatmap_difference(&m, &m[1..]).is_err());
    }
}
