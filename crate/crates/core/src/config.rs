//! Plain-text experiment configuration.
//!
//! The format is line-oriented `key = value` pairs grouped in `[env]`,
//! `[es]`, `[curriculum]` and `[run]` sections. `#` starts a comment.
//! Only `env.preset` and `run.budget` are required; everything else has a
//! default. Unknown keys are rejected.
//!
//! ```text
//! [env]
//! preset = double_pole        # or `synthetic`
//!
//! [curriculum]
//! difficulty = power:3        # `standard`, `linear` or `power:<p>`
//!
//! [run]
//! budget = 10000000           # environment steps per replication
//! ```

use crate::curriculum::{CurriculumConfig, DifficultyFunction};
use crate::envs::{DoublePole, DoublePoleConfig, Environment, SyntheticEnv};
use crate::es::EsConfig;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given more than once")]
    Duplicate(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvPreset {
    DoublePole,
    Synthetic,
}

impl EnvPreset {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvPreset::DoublePole => "double_pole",
            EnvPreset::Synthetic => "synthetic",
        }
    }
}

impl FromStr for EnvPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "double_pole" => Ok(EnvPreset::DoublePole),
            "synthetic" => Ok(EnvPreset::Synthetic),
            other => Err(format!("expected `double_pole` or `synthetic`, got `{other}`")),
        }
    }
}

/// How offspring evaluation conditions are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Uniform draws over the condition grid.
    Standard,
    Curriculum(DifficultyFunction),
}

impl Method {
    /// Short label used in output files: `standard`, `linear`, `power:3`.
    pub fn label(&self) -> String {
        match self {
            Method::Standard => "standard".into(),
            Method::Curriculum(f) => f.to_string(),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "standard" | "none" => Ok(Method::Standard),
            other => other.parse().map(Method::Curriculum),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvPreset,
    /// Double-pole episode length.
    pub max_steps: u64,
    pub cart_friction: f64,
    pub pole_friction: f64,
    /// Use the theta1 interval as printed (±0.0472) instead of ±0.10472.
    pub literal_theta1: bool,
    pub peephole: bool,
    pub hidden_units: usize,
    /// Parameter count of the synthetic task (only the first five are scored).
    pub synthetic_params: usize,

    pub es: EsConfig,

    pub method: Method,
    pub warmup_fraction: f64,
    /// Iterations the warmup fraction refers to; estimated from the budget
    /// when absent.
    pub planned_generations: Option<u64>,

    pub budget: u64,
    pub replications: usize,
    pub seed: u64,
    pub posteval_episodes: usize,
    pub checkpoint_interval: u64,
    pub screen_episodes: usize,
    pub snapshot_fraction: f64,
    pub progress_interval: u64,
}

impl ExperimentConfig {
    pub fn new(env: EnvPreset, budget: u64) -> Self {
        Self {
            env,
            max_steps: 1000,
            cart_friction: 0.0,
            pole_friction: 0.0,
            literal_theta1: false,
            peephole: false,
            hidden_units: 10,
            synthetic_params: 5,
            es: EsConfig::default(),
            method: Method::Standard,
            warmup_fraction: 0.1,
            planned_generations: None,
            budget,
            replications: 1,
            seed: 0,
            posteval_episodes: 1000,
            checkpoint_interval: 10,
            screen_episodes: 64,
            snapshot_fraction: 0.05,
            progress_interval: 10,
        }
    }

    pub fn double_pole_config(&self) -> DoublePoleConfig {
        let mut c = DoublePoleConfig::default();
        c.physics.cart_friction = self.cart_friction;
        c.physics.pole_friction = self.pole_friction;
        c.max_steps = self.max_steps;
        c.network.n_hidden = self.hidden_units;
        c.network = c.network.with_peephole(self.peephole);
        if self.literal_theta1 {
            c = c.with_literal_theta1();
        }
        c
    }

    pub fn build_env(&self) -> Box<dyn Environment + Send> {
        match self.env {
            EnvPreset::DoublePole => Box::new(DoublePole::new(self.double_pole_config())),
            EnvPreset::Synthetic => Box::new(SyntheticEnv::with_param_count(self.synthetic_params)),
        }
    }

    pub fn curriculum(&self) -> Option<CurriculumConfig> {
        match self.method {
            Method::Standard => None,
            Method::Curriculum(difficulty) => Some(CurriculumConfig {
                eta: self.es.eta,
                warmup_fraction: self.warmup_fraction,
                difficulty,
            }),
        }
    }

    /// Generations the warmup fraction is measured against: the explicit
    /// setting, or the number of generations the budget affords if every
    /// episode ran to its step limit.
    pub fn total_iterations(&self, episode_max: u64) -> u64 {
        self.planned_generations.unwrap_or_else(|| {
            let per_gen = self.es.max_steps_per_generation(episode_max).max(1);
            self.budget.div_ceil(per_gen).max(1)
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let es = &self.es;
        if !(es.sigma > 0.0 && es.sigma.is_finite()) {
            return Err(invalid("es.sigma", format!("must be > 0, got {}", es.sigma)));
        }
        if es.lambda == 0 {
            return Err(invalid("es.lambda", "must be >= 1"));
        }
        if es.eta == 0 {
            return Err(invalid("es.eta", "must be >= 1"));
        }
        if !(es.adam.alpha > 0.0) {
            return Err(invalid("es.alpha", "must be > 0"));
        }
        for (key, b) in [("es.beta1", es.adam.beta1), ("es.beta2", es.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(key, "must lie in [0, 1)"));
            }
        }
        if !(es.adam.eps > 0.0) {
            return Err(invalid("es.epsilon", "must be > 0"));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(invalid("curriculum.warmup_fraction", "must lie in (0, 1)"));
        }
        if let Method::Curriculum(f) = self.method {
            f.validate().map_err(|m| invalid("curriculum.difficulty", m))?;
        }
        if self.planned_generations == Some(0) {
            return Err(invalid("curriculum.planned_generations", "must be >= 1"));
        }
        if self.max_steps == 0 {
            return Err(invalid("env.max_steps", "must be >= 1"));
        }
        if self.hidden_units == 0 {
            return Err(invalid("env.hidden_units", "must be >= 1"));
        }
        if self.cart_friction < 0.0 || self.pole_friction < 0.0 {
            return Err(invalid("env.cart_friction", "friction must be >= 0"));
        }
        if self.synthetic_params < crate::envs::SLOTS {
            return Err(invalid("env.synthetic_params", "must be >= 5"));
        }
        let positive = [
            ("run.budget", self.budget),
            ("run.replications", self.replications as u64),
            ("run.posteval_episodes", self.posteval_episodes as u64),
            ("run.checkpoint_interval", self.checkpoint_interval),
            ("run.screen_episodes", self.screen_episodes as u64),
            ("run.progress_interval", self.progress_interval),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(invalid(key, "must be >= 1"));
            }
        }
        if !(self.snapshot_fraction > 0.0 && self.snapshot_fraction <= 1.0) {
            return Err(invalid("run.snapshot_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Canonical text form; `parse_config(&c.render()) == Ok(c)`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[env]");
        let _ = writeln!(s, "preset = {}", self.env.as_str());
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let _ = writeln!(s, "cart_friction = {}", self.cart_friction);
        let _ = writeln!(s, "pole_friction = {}", self.pole_friction);
        let _ = writeln!(s, "literal_theta1 = {}", self.literal_theta1);
        let _ = writeln!(s, "peephole = {}", self.peephole);
        let _ = writeln!(s, "hidden_units = {}", self.hidden_units);
        let _ = writeln!(s, "synthetic_params = {}", self.synthetic_params);
        let _ = writeln!(s, "\n[es]");
        let _ = writeln!(s, "sigma = {}", self.es.sigma);
        let _ = writeln!(s, "lambda = {}", self.es.lambda);
        let _ = writeln!(s, "eta = {}", self.es.eta);
        let _ = writeln!(s, "alpha = {}", self.es.adam.alpha);
        let _ = writeln!(s, "beta1 = {}", self.es.adam.beta1);
        let _ = writeln!(s, "beta2 = {}", self.es.adam.beta2);
        let _ = writeln!(s, "epsilon = {}", self.es.adam.eps);
        let _ = writeln!(s, "evaluate_parent = {}", self.es.evaluate_parent);
        let _ = writeln!(s, "\n[curriculum]");
        let _ = writeln!(s, "difficulty = {}", self.method.label());
        let _ = writeln!(s, "warmup_fraction = {}", self.warmup_fraction);
        if let Some(n) = self.planned_generations {
            let _ = writeln!(s, "planned_generations = {n}");
        }
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "budget = {}", self.budget);
        let _ = writeln!(s, "replications = {}", self.replications);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "posteval_episodes = {}", self.posteval_episodes);
        let _ = writeln!(s, "checkpoint_interval = {}", self.checkpoint_interval);
        let _ = writeln!(s, "screen_episodes = {}", self.screen_episodes);
        let _ = writeln!(s, "snapshot_fraction = {}", self.snapshot_fraction);
        let _ = writeln!(s, "progress_interval = {}", self.progress_interval);
        s
    }

    /// First 16 hex digits of the SHA-256 of [`render`](Self::render).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with_overrides(text, &[])
}

/// Parses `text`, then applies `section.key = value` overrides on top.
pub fn parse_config_with_overrides(
    text: &str,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let mut entries = read_entries(text)?;
    for (key, value) in overrides {
        if !key.contains('.') {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        entries.insert(key.clone(), value.clone());
    }
    build(entries)
}

fn read_entries(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut entries = BTreeMap::new();
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(ConfigError::Syntax {
                line: n + 1,
                message: format!("unterminated section header `{line}`"),
            })?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
            line: n + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let section = section.as_deref().ok_or(ConfigError::Syntax {
            line: n + 1,
            message: "key outside of any section".into(),
        })?;
        let full = format!("{section}.{}", key.trim());
        if entries.insert(full.clone(), value.trim().to_string()).is_some() {
            return Err(ConfigError::Duplicate(full));
        }
    }
    Ok(entries)
}

fn build(mut entries: BTreeMap<String, String>) -> Result<ExperimentConfig, ConfigError> {
    fn take<T: FromStr>(
        entries: &mut BTreeMap<String, String>,
        key: &str,
    ) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| invalid(key, format!("`{v}`: {e}"))),
        }
    }

    let env: EnvPreset = take(&mut entries, "env.preset")?.ok_or(ConfigError::Missing("env.preset"))?;
    let budget: u64 = take(&mut entries, "run.budget")?.ok_or(ConfigError::Missing("run.budget"))?;
    let mut c = ExperimentConfig::new(env, budget);

    macro_rules! set {
        ($key:literal => $field:expr) => {
            if let Some(v) = take(&mut entries, $key)? {
                $field = v;
            }
        };
    }
    set!("env.max_steps" => c.max_steps);
    set!("env.cart_friction" => c.cart_friction);
    set!("env.pole_friction" => c.pole_friction);
    set!("env.literal_theta1" => c.literal_theta1);
    set!("env.peephole" => c.peephole);
    set!("env.hidden_units" => c.hidden_units);
    set!("env.synthetic_params" => c.synthetic_params);
    set!("es.sigma" => c.es.sigma);
    set!("es.lambda" => c.es.lambda);
    set!("es.eta" => c.es.eta);
    set!("es.alpha" => c.es.adam.alpha);
    set!("es.beta1" => c.es.adam.beta1);
    set!("es.beta2" => c.es.adam.beta2);
    set!("es.epsilon" => c.es.adam.eps);
    set!("es.evaluate_parent" => c.es.evaluate_parent);
    set!("curriculum.difficulty" => c.method);
    set!("curriculum.warmup_fraction" => c.warmup_fraction);
    if let Some(v) = take(&mut entries, "curriculum.planned_generations")? {
        c.planned_generations = Some(v);
    }
    set!("run.replications" => c.replications);
    set!("run.seed" => c.seed);
    set!("run.posteval_episodes" => c.posteval_episodes);
    set!("run.checkpoint_interval" => c.checkpoint_interval);
    set!("run.screen_episodes" => c.screen_episodes);
    set!("run.snapshot_fraction" => c.snapshot_fraction);
    set!("run.progress_interval" => c.progress_interval);

    if let Some(key) = entries.into_keys().next() {
        return Err(ConfigError::UnknownKey(key));
    }
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::es::AdamConfig;
    use proptest::prelude::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_config("[env]\npreset = double_pole\n[run]\nbudget = 1000\n").unwrap();
        assert_eq!(c, ExperimentConfig::new(EnvPreset::DoublePole, 1000));
        assert_eq!(c.es.sigma, 0.02);
        assert_eq!(c.es.lambda, 20);
        assert_eq!(c.es.eta, 10);
        assert_eq!(c.warmup_fraction, 0.1);
        assert_eq!(c.es.adam, AdamConfig::default());
        assert_eq!(c.method, Method::Standard);
    }

    #[test]
    fn difficulty_power() {
        let c = parse_config(
            "[env]\npreset = synthetic\n[curriculum]\ndifficulty = power:3\n[run]\nbudget = 10\n",
        )
        .unwrap();
        assert_eq!(c.method, Method::Curriculum(DifficultyFunction::Power(3.0)));
        assert_eq!(c.curriculum().unwrap().difficulty, DifficultyFunction::Power(3.0));
    }

    #[test]
    fn negative_sigma_is_named() {
        let err = parse_config("[env]\npreset = synthetic\n[es]\nsigma = -1\n[run]\nbudget = 10\n")
            .unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { key, .. } if key == "es.sigma"));
        assert!(err.to_string().contains("sigma"));
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_config("[env]\npreset = synthetic\n"),
            Err(ConfigError::Missing("run.budget"))
        );
        assert_eq!(
            parse_config("[env]\npreset = synthetic\nbogus = 1\n[run]\nbudget = 5\n"),
            Err(ConfigError::UnknownKey("env.bogus".into()))
        );
        assert!(matches!(
            parse_config("[env]\npreset = synthetic\npreset = synthetic\n"),
            Err(ConfigError::Duplicate(_))
        ));
        assert!(matches!(
            parse_config("budget = 5\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("[env]\npreset = walker\n[run]\nbudget = 5\n"),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn overrides_win() {
        let text = "[env]\npreset = synthetic\n[es]\nsigma = 0.1\n[run]\nbudget = 10\n";
        let c = parse_config_with_overrides(
            text,
            &[("es.sigma".into(), "0.05".into()), ("run.seed".into(), "9".into())],
        )
        .unwrap();
        assert_eq!(c.es.sigma, 0.05);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::new(EnvPreset::Synthetic, 10);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn total_iterations_estimate() {
        let c = ExperimentConfig::new(EnvPreset::DoublePole, 10_000_000);
        // (2*20*10 + 10) * 1000 steps per generation at most
        assert_eq!(c.total_iterations(1000), 10_000_000u64.div_ceil(410_000));
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            any::<bool>(),
            1u64..10_000_000,
            0.001f64..1.0,
            1usize..50,
            1usize..20,
            prop_oneof![
                Just(Method::Standard),
                Just(Method::Curriculum(DifficultyFunction::Linear)),
                (1.0f64..6.0).prop_map(|p| Method::Curriculum(DifficultyFunction::Power(p))),
            ],
            0.01f64..0.99,
            any::<u64>(),
            proptest::option::of(1u64..1000),
            any::<bool>(),
        )
            .prop_map(|(dp, budget, sigma, lambda, eta, method, warm, seed, planned, peep)| {
                let env = if dp { EnvPreset::DoublePole } else { EnvPreset::Synthetic };
                let mut c = ExperimentConfig::new(env, budget);
                c.es.sigma = sigma;
                c.es.lambda = lambda;
                c.es.eta = eta;
                c.method = method;
                c.warmup_fraction = warm;
                c.seed = seed;
                c.planned_generations = planned;
                c.peephole = peep;
                c
            })
    }

    proptest! {
        #[test]
        fn render_round_trip(c in arb_config()) {
            prop_assert_eq!(parse_config(&c.render()), Ok(c));
        }
    }
}
