//! A five-slot obstacle benchmark with a closed-form score.
//!
//! A condition is a sequence of five obstacle types, each one of five
//! kinds, giving 5^5 = 3125 conditions. The first five parameters are read
//! as a point `p` and slot `k` scores `1 / (1 + (p[k] - t[type_k])^2)`,
//! so the fitness lies in `(0, 5]` and depends on the condition. Every
//! episode consumes a single step.

use super::{ConditionId, ConditionSpace, EnvError, EpisodeResult, Termination};

pub const SLOTS: usize = 5;

/// Target coordinate per obstacle type.
pub const OBSTACLE_TARGETS: [f64; 5] = [-0.8, -0.4, 0.0, 0.4, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SyntheticCondition {
    pub slots: [u8; SLOTS],
}

impl SyntheticCondition {
    pub fn score(&self, p: &[f64]) -> f64 {
        self.slots
            .iter()
            .zip(p)
            .map(|(&kind, &v)| {
                let d = v - OBSTACLE_TARGETS[kind as usize];
                1.0 / (1.0 + d * d)
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    space: ConditionSpace,
    param_count: usize,
}

impl SyntheticEnv {
    pub fn new() -> Self {
        Self::with_param_count(SLOTS)
    }

    /// Extra parameters beyond the first five are carried but ignored.
    pub fn with_param_count(param_count: usize) -> Self {
        assert!(param_count >= SLOTS);
        Self {
            space: ConditionSpace::uniform(SLOTS, OBSTACLE_TARGETS.len() as u32),
            param_count,
        }
    }

    pub fn condition(&self, id: ConditionId) -> Result<SyntheticCondition, EnvError> {
        let digits = self.space.decode(id)?;
        let mut slots = [0u8; SLOTS];
        for (s, d) in slots.iter_mut().zip(digits) {
            *s = d as u8;
        }
        Ok(SyntheticCondition { slots })
    }

    pub fn run(&self, params: &[f64], condition: &SyntheticCondition) -> Result<EpisodeResult, EnvError> {
        if params.len() != self.param_count {
            return Err(EnvError::ParamLength {
                expected: self.param_count,
                got: params.len(),
            });
        }
        Ok(EpisodeResult {
            fitness: condition.score(params),
            steps: 1,
            termination: Termination::MaxSteps,
        })
    }
}

impl Default for SyntheticEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl super::Environment for SyntheticEnv {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn param_count(&self) -> usize {
        self.param_count
    }

    fn space(&self) -> &ConditionSpace {
        &self.space
    }

    fn max_steps(&self) -> u64 {
        1
    }

    fn run_episode(
        &self,
        params: &[f64],
        condition: ConditionId,
    ) -> Result<EpisodeResult, EnvError> {
        let c = self.condition(condition)?;
        self.run(params, &c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Environment;

    #[test]
    fn space_size() {
        assert_eq!(SyntheticEnv::new().space().total(), 3125);
    }

    #[test]
    fn perfect_and_unit_distance_scores() {
        let env = SyntheticEnv::new();
        let c = SyntheticCondition {
            slots: [0, 4, 2, 1, 3],
        };
        let p: Vec<f64> = c.slots.iter().map(|&k| OBSTACLE_TARGETS[k as usize]).collect();
        assert_eq!(env.run(&p, &c).unwrap().fitness, 5.0);
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        let r = env.run(&shifted, &c).unwrap();
        assert!((r.fitness - 2.5).abs() < 1e-12);
        assert_eq!(r.steps, 1);
    }

    #[test]
    fn swapping_equal_slots_keeps_score() {
        let a = SyntheticCondition {
            slots: [1, 3, 1, 0, 2],
        };
        let b = SyntheticCondition {
            slots: [1, 3, 1, 0, 2],
        };
        let p = [0.1, 0.2, 0.1, -0.5, 0.7];
        // swap slots 0 and 2: same type and same coordinate
        let pb = [p[2], p[1], p[0], p[3], p[4]];
        assert_eq!(a.score(&p), b.score(&pb));
    }

    #[test]
    fn decodes_slot_types() {
        let env = SyntheticEnv::new();
        assert_eq!(env.condition(ConditionId(0)).unwrap().slots, [0; 5]);
        assert_eq!(env.condition(ConditionId(3124)).unwrap().slots, [4; 5]);
        assert_eq!(env.condition(ConditionId(7)).unwrap().slots, [0, 0, 0, 1, 2]);
        assert!(env.condition(ConditionId(3125)).is_err());
    }

    #[test]
    fn score_is_bounded() {
        let env = SyntheticEnv::new();
        let p = [3.0, -2.0, 0.0, 0.5, 10.0];
        for id in env.space().ids() {
            let f = env.run_episode(&p, id).unwrap().fitness;
            assert!(f > 0.0 && f <= 5.0);
        }
    }
}
