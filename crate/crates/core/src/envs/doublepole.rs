//! Long double-pole balancing without velocity information.
//!
//! Two poles of different length are hinged on a cart that moves on a
//! bounded track. The controller sees the cart position and the two pole
//! angles (no velocities) and outputs a force. Each control step lasts
//! 0.02 s and is integrated with two classical RK4 substeps.
//!
//! Pole angles are measured from the upright position. Each pole is a
//! uniform rod of half-length `l`, which gives the effective-mass
//! formulation
//!
//! ```text
//! m~_i = m_i (1 - 3/4 cos^2 th_i)
//! F~_i = m_i l_i thd_i^2 sin th_i + 3/4 m_i cos th_i (mu_p thd_i / (m_i l_i) - g sin th_i)
//! xdd  = (F - mu_c sgn(xd) + sum F~_i) / (M + sum m~_i)
//! thdd_i = -3/4 (xdd cos th_i - g sin th_i + mu_p thd_i / (m_i l_i)) / l_i
//! ```
//!
//! with `g > 0`, so an uncontrolled pole falls away from vertical.

use super::{linspace, ConditionId, ConditionSpace, EnvError, EpisodeResult, Termination};
use crate::nets::{Controller, NetworkSpec};
use crate::rng::StreamRng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The theta1 half-range as printed in the original task description.
pub const THETA1_LITERAL_BOUND: f64 = 0.0472;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublePoleParams {
    pub cart_mass: f64,
    pub pole1_mass: f64,
    pub pole2_mass: f64,
    /// Full pole lengths (m); the dynamics use half-lengths.
    pub pole1_length: f64,
    pub pole2_length: f64,
    pub force_limit: f64,
    pub track_limit: f64,
    pub angle_limit: f64,
    pub control_dt: f64,
    pub gravity: f64,
    pub cart_friction: f64,
    pub pole_friction: f64,
}

impl Default for DoublePoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole1_mass: 0.5,
            pole2_mass: 0.25,
            pole1_length: 1.0,
            pole2_length: 0.5,
            force_limit: 10.0,
            track_limit: 2.4,
            angle_limit: PI / 5.0,
            control_dt: 0.02,
            gravity: 9.8,
            cart_friction: 0.0,
            pole_friction: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DoublePoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta1: f64,
    pub theta1_dot: f64,
    pub theta2: f64,
    pub theta2_dot: f64,
}

impl DoublePoleState {
    /// Components in grid order: x, x_dot, theta1, theta1_dot, theta2,
    /// theta2_dot.
    pub fn to_array(self) -> [f64; 6] {
        [
            self.x,
            self.x_dot,
            self.theta1,
            self.theta1_dot,
            self.theta2,
            self.theta2_dot,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            x: a[0],
            x_dot: a[1],
            theta1: a[2],
            theta1_dot: a[3],
            theta2: a[4],
            theta2_dot: a[5],
        }
    }

    pub fn mirrored(self) -> Self {
        Self::from_array(self.to_array().map(|v| -v))
    }
}

impl DoublePoleParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("pole1_mass", self.pole1_mass),
            ("pole2_mass", self.pole2_mass),
            ("pole1_length", self.pole1_length),
            ("pole2_length", self.pole2_length),
            ("force_limit", self.force_limit),
            ("track_limit", self.track_limit),
            ("angle_limit", self.angle_limit),
            ("control_dt", self.control_dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.cart_friction < 0.0 || self.pole_friction < 0.0 {
            return Err("friction coefficients must be non-negative".into());
        }
        Ok(())
    }

    pub fn is_live(&self, s: &DoublePoleState) -> bool {
        s.x.abs() <= self.track_limit
            && s.theta1.abs() <= self.angle_limit
            && s.theta2.abs() <= self.angle_limit
    }

    /// Time derivative `(xd, xdd, th1d, th1dd, th2d, th2dd)` under `force`,
    /// which is clamped to the actuator range.
    pub fn derivatives(
        &self,
        state: &DoublePoleState,
        force: f64,
    ) -> Result<DoublePoleState, EnvError> {
        let a = state.to_array();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFiniteState(a));
        }
        let force = force.clamp(-self.force_limit, self.force_limit);
        Ok(DoublePoleState::from_array(self.derivs(&a, force)))
    }

    fn derivs(&self, s: &[f64; 6], force: f64) -> [f64; 6] {
        let g = self.gravity;
        let mup = self.pole_friction;
        let poles = [
            (self.pole1_mass, self.pole1_length / 2.0, s[2], s[3]),
            (self.pole2_mass, self.pole2_length / 2.0, s[4], s[5]),
        ];
        let mut eff_force = 0.0;
        let mut eff_mass = 0.0;
        let mut trig = [(0.0, 0.0); 2];
        for (k, &(m, l, th, thd)) in poles.iter().enumerate() {
            let (sin, cos) = th.sin_cos();
            trig[k] = (sin, cos);
            let friction = mup * thd / (m * l);
            eff_force += m * l * thd * thd * sin + 0.75 * m * cos * (friction - g * sin);
            eff_mass += m * (1.0 - 0.75 * cos * cos);
        }
        let cart_friction = if self.cart_friction != 0.0 {
            self.cart_friction * s[1].signum()
        } else {
            0.0
        };
        let xdd = (force - cart_friction + eff_force) / (self.cart_mass + eff_mass);
        let mut thdd = [0.0; 2];
        for (k, &(m, l, _, thd)) in poles.iter().enumerate() {
            let (sin, cos) = trig[k];
            thdd[k] = -0.75 * (xdd * cos - g * sin + mup * thd / (m * l)) / l;
        }
        [s[1], xdd, s[3], thdd[0], s[5], thdd[1]]
    }

    fn rk4(&self, s: &[f64; 6], force: f64, h: f64) -> [f64; 6] {
        let add = |a: &[f64; 6], k: &[f64; 6], c: f64| -> [f64; 6] {
            std::array::from_fn(|i| a[i] + c * k[i])
        };
        let k1 = self.derivs(s, force);
        let k2 = self.derivs(&add(s, &k1, h / 2.0), force);
        let k3 = self.derivs(&add(s, &k2, h / 2.0), force);
        let k4 = self.derivs(&add(s, &k3, h), force);
        std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// Advances one control interval with the force held constant.
    pub fn step(&self, state: &DoublePoleState, force: f64, substeps: u32) -> DoublePoleState {
        let force = force.clamp(-self.force_limit, self.force_limit);
        let h = self.control_dt / f64::from(substeps);
        let mut s = state.to_array();
        for _ in 0..substeps {
            s = self.rk4(&s, force, h);
        }
        DoublePoleState::from_array(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublePoleConfig {
    pub physics: DoublePoleParams,
    /// Half-widths of the initial-state intervals, in grid order.
    pub ranges: [f64; 6],
    pub grid_values: u32,
    pub heatmap_values: u32,
    pub max_steps: u64,
    pub substeps: u32,
    pub network: NetworkSpec,
}

impl Default for DoublePoleConfig {
    fn default() -> Self {
        Self {
            physics: DoublePoleParams::default(),
            ranges: [1.944, 1.215, 0.10472, 0.135088, 0.10472, 0.135088],
            grid_values: 5,
            heatmap_values: 3,
            max_steps: 1000,
            substeps: 2,
            network: NetworkSpec::double_pole(),
        }
    }
}

impl DoublePoleConfig {
    /// Uses the theta1 interval exactly as printed (`±0.0472`).
    pub fn with_literal_theta1(mut self) -> Self {
        self.ranges[2] = THETA1_LITERAL_BOUND;
        self
    }
}

#[derive(Debug, Clone)]
pub struct DoublePole {
    config: DoublePoleConfig,
    space: ConditionSpace,
    grid: Vec<Vec<f64>>,
    heatmap_grid: Vec<Vec<f64>>,
}

impl DoublePole {
    pub fn new(config: DoublePoleConfig) -> Self {
        let axes = |n: u32| -> Vec<Vec<f64>> {
            config.ranges.iter().map(|&b| linspace(-b, b, n)).collect()
        };
        Self {
            space: ConditionSpace::uniform(6, config.grid_values),
            grid: axes(config.grid_values),
            heatmap_grid: axes(config.heatmap_values),
            config,
        }
    }

    pub fn config(&self) -> &DoublePoleConfig {
        &self.config
    }

    pub fn params(&self) -> &DoublePoleParams {
        &self.config.physics
    }

    /// Per-dimension grid values of the training grid.
    pub fn grid_values(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn initial_state(&self, id: ConditionId) -> Result<DoublePoleState, EnvError> {
        decode_state(&self.space, &self.grid, id)
    }

    pub fn heatmap_state(&self, id: ConditionId) -> Result<DoublePoleState, EnvError> {
        decode_state(&super::Environment::heatmap_space(self), &self.heatmap_grid, id)
    }

    /// Continuous uniform draw over the initial-state intervals.
    pub fn sample_uniform_state(&self, rng: &mut StreamRng) -> DoublePoleState {
        DoublePoleState::from_array(self.config.ranges.map(|b| rng.random_range(-b..=b)))
    }

    pub fn step(&self, state: &DoublePoleState, force: f64) -> DoublePoleState {
        self.config.physics.step(state, force, self.config.substeps)
    }

    /// Runs one episode from an explicit initial state.
    pub fn run_from_state(
        &self,
        params: &[f64],
        initial: DoublePoleState,
    ) -> Result<EpisodeResult, EnvError> {
        let phys = &self.config.physics;
        let mut controller = Controller::new(self.config.network, params)?;
        let mut state = initial;
        let mut input = [0.0; 3];
        let mut output = [0.0; 1];
        let mut steps = 0;
        let mut termination = Termination::MaxSteps;
        while steps < self.config.max_steps {
            input[0] = state.x / phys.track_limit;
            input[1] = state.theta1 / phys.angle_limit;
            input[2] = state.theta2 / phys.angle_limit;
            controller.act(&input, &mut output)?;
            let force = phys.force_limit * output[0];
            state = self.step(&state, force);
            steps += 1;
            if state.theta1.abs() > phys.angle_limit || state.theta2.abs() > phys.angle_limit {
                termination = Termination::PoleFell;
                break;
            }
            if state.x.abs() > phys.track_limit {
                termination = Termination::CartOut;
                break;
            }
        }
        Ok(EpisodeResult {
            fitness: steps as f64,
            steps,
            termination,
        })
    }
}

impl Default for DoublePole {
    fn default() -> Self {
        Self::new(DoublePoleConfig::default())
    }
}

fn decode_state(
    space: &ConditionSpace,
    axes: &[Vec<f64>],
    id: ConditionId,
) -> Result<DoublePoleState, EnvError> {
    let digits = space.decode(id)?;
    let mut a = [0.0; 6];
    for (k, (&d, axis)) in digits.iter().zip(axes).enumerate() {
        a[k] = axis[d as usize];
    }
    Ok(DoublePoleState::from_array(a))
}

impl super::Environment for DoublePole {
    fn name(&self) -> &'static str {
        "double_pole"
    }

    fn param_count(&self) -> usize {
        self.config.network.param_count()
    }

    fn space(&self) -> &ConditionSpace {
        &self.space
    }

    fn max_steps(&self) -> u64 {
        self.config.max_steps
    }

    fn run_episode(
        &self,
        params: &[f64],
        condition: ConditionId,
    ) -> Result<EpisodeResult, EnvError> {
        self.run_from_state(params, self.initial_state(condition)?)
    }

    fn run_random_episode(
        &self,
        params: &[f64],
        rng: &mut StreamRng,
    ) -> Result<EpisodeResult, EnvError> {
        let s = self.sample_uniform_state(rng);
        self.run_from_state(params, s)
    }

    fn heatmap_space(&self) -> ConditionSpace {
        ConditionSpace::uniform(6, self.config.heatmap_values)
    }

    fn run_heatmap_episode(
        &self,
        params: &[f64],
        condition: ConditionId,
    ) -> Result<EpisodeResult, EnvError> {
        self.run_from_state(params, self.heatmap_state(condition)?)
    }
}
