//! Replication driver.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.ini
//! generations.csv            merged over replications
//! learning_curve.csv
//! rep_00/generations.csv
//! rep_00/checkpoint.ckpt     latest state, rewritten every checkpoint interval
//! rep_00/snapshots/snap_01.ckpt ...
//! ```

use super::checkpoint::{BestAgent, RunCheckpoint};
use super::report::{
    learning_curve, read_rows, write_generations, write_learning_curve, ArtifactHeader,
    GenerationLogWriter, GenerationRow,
};
use super::HarnessError;
use crate::config::ExperimentConfig;
use crate::curriculum::{CurriculumSelector, SelectorState};
use crate::envs::{ConditionSpace, Environment};
use crate::es::{run_generation, ConditionSelector, EsState, UniformSelector};
use crate::exec::Executor;
use crate::rng::{Purpose, StreamKey, StreamRng};
use crate::ConditionId;
use std::path::{Path, PathBuf};

/// Points on the learning-curve grid.
pub const CURVE_POINTS: usize = 100;

/// The selector configured for a run.
#[derive(Debug, Clone)]
pub enum RunSelector {
    Uniform(UniformSelector),
    Curriculum(CurriculumSelector),
}

impl RunSelector {
    pub fn for_config(cfg: &ExperimentConfig, env: &dyn Environment) -> Self {
        match cfg.curriculum() {
            None => RunSelector::Uniform(UniformSelector),
            Some(c) => RunSelector::Curriculum(CurriculumSelector::new(
                c,
                env.space().total(),
                cfg.total_iterations(env.max_steps()),
            )),
        }
    }

    pub fn state(&self) -> Option<&SelectorState> {
        match self {
            RunSelector::Uniform(_) => None,
            RunSelector::Curriculum(c) => Some(&c.state),
        }
    }
}

impl ConditionSelector for RunSelector {
    fn prepare(&mut self, space: &ConditionSpace) {
        match self {
            RunSelector::Uniform(s) => s.prepare(space),
            RunSelector::Curriculum(s) => s.prepare(space),
        }
    }

    fn select(&self, space: &ConditionSpace, count: usize, rng: &mut StreamRng) -> Vec<ConditionId> {
        match self {
            RunSelector::Uniform(s) => s.select(space, count, rng),
            RunSelector::Curriculum(s) => s.select(space, count, rng),
        }
    }

    fn observe(&mut self, observations: &[(ConditionId, f64)]) {
        match self {
            RunSelector::Uniform(s) => s.observe(observations),
            RunSelector::Curriculum(s) => s.observe(observations),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where artifacts go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Continue from existing replication checkpoints instead of refusing
    /// to overwrite them.
    pub resume: bool,
    /// Stop each replication after this generation without marking it
    /// finished (a checkpoint is still written).
    pub stop_after: Option<u64>,
    /// Command-line overrides, recorded in artifact headers.
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub replication: usize,
    /// Rows produced by this call (not those already on disk when resuming).
    pub rows: Vec<GenerationRow>,
    pub checkpoint: RunCheckpoint,
    /// Generation the replication was resumed from, if any.
    pub resumed_from: Option<u64>,
}

impl ReplicationResult {
    pub fn finished(&self) -> bool {
        self.checkpoint.finished
    }
}

pub fn rep_dir(out: &Path, replication: usize) -> PathBuf {
    out.join(format!("rep_{replication:02}"))
}

pub fn checkpoint_path(out: &Path, replication: usize) -> PathBuf {
    rep_dir(out, replication).join("checkpoint.ckpt")
}

/// Snapshot files of one replication, in milestone order.
pub fn snapshot_paths(out: &Path, replication: usize) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = rep_dir(out, replication).join("snapshots");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(HarnessError::io("listing", &dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn snapshot_count(cfg: &ExperimentConfig) -> u32 {
    (1.0 / cfg.snapshot_fraction + 1e-9).floor().max(1.0) as u32
}

fn milestone(cfg: &ExperimentConfig, k: u32) -> u64 {
    (f64::from(k) * cfg.snapshot_fraction * cfg.budget as f64).round() as u64
}

/// Mean fitness on the fixed screening draw. The draw depends only on the
/// replication seed, so every screened parent faces the same conditions.
fn screen(
    theta: &[f64],
    env: &dyn Environment,
    cfg: &ExperimentConfig,
    seed: u64,
    exec: &Executor,
) -> Result<f64, HarnessError> {
    let n = cfg.screen_episodes;
    let results = exec.map(n, |e| {
        let mut rng = StreamKey::new(seed, Purpose::Screening).episode(e as u64).rng();
        env.run_random_episode(theta, &mut rng)
    });
    let mut total = 0.0;
    for r in results {
        total += r?.fitness;
    }
    Ok(total / n as f64)
}

fn fresh_checkpoint(cfg: &ExperimentConfig, env: &dyn Environment, replication: usize) -> RunCheckpoint {
    let selector = RunSelector::for_config(cfg, env);
    RunCheckpoint {
        config_hash: cfg.hash(),
        replication,
        cum_steps: 0,
        next_snapshot: 1,
        finished: false,
        state: EsState::new(env.param_count(), cfg.seed.wrapping_add(replication as u64)),
        selector: selector.state().cloned(),
        best: None,
    }
}

/// Runs replication `replication` from scratch.
pub fn run_replication(
    cfg: &ExperimentConfig,
    env: &dyn Environment,
    replication: usize,
    opts: &RunOptions,
    exec: &Executor,
) -> Result<ReplicationResult, HarnessError> {
    drive(cfg, env, fresh_checkpoint(cfg, env, replication), false, opts, exec)
}

/// Continues a replication from `checkpoint`.
pub fn resume_replication(
    cfg: &ExperimentConfig,
    env: &dyn Environment,
    checkpoint: RunCheckpoint,
    opts: &RunOptions,
    exec: &Executor,
) -> Result<ReplicationResult, HarnessError> {
    if checkpoint.config_hash != cfg.hash() {
        return Err(HarnessError::ConfigMismatch {
            path: format!("replication {} checkpoint", checkpoint.replication),
            found: checkpoint.config_hash,
            expected: cfg.hash(),
        });
    }
    drive(cfg, env, checkpoint, true, opts, exec)
}

fn drive(
    cfg: &ExperimentConfig,
    env: &dyn Environment,
    mut ckpt: RunCheckpoint,
    resumed: bool,
    opts: &RunOptions,
    exec: &Executor,
) -> Result<ReplicationResult, HarnessError> {
    let rep = ckpt.replication;
    let resumed_from = resumed.then_some(ckpt.state.generation);
    if ckpt.finished {
        return Ok(ReplicationResult {
            replication: rep,
            rows: Vec::new(),
            checkpoint: ckpt,
            resumed_from,
        });
    }

    let header = ArtifactHeader {
        config_hash: cfg.hash(),
        seed: ckpt.state.seed,
        overrides: opts.overrides.clone(),
    };
    let dir = opts.out_dir.as_ref().map(|o| rep_dir(o, rep));
    let mut log = match &dir {
        None => None,
        Some(d) => {
            let snaps = d.join("snapshots");
            std::fs::create_dir_all(&snaps).map_err(HarnessError::io("creating", &snaps))?;
            let path = d.join("generations.csv");
            Some(if resumed && path.exists() {
                GenerationLogWriter::reopen_at(&path, ckpt.state.generation)?
            } else {
                GenerationLogWriter::create(&path, &header)?
            })
        }
    };

    let mut selector = match (cfg.curriculum(), ckpt.selector.take()) {
        (Some(c), Some(state)) => RunSelector::Curriculum(CurriculumSelector::from_state(c, state)),
        (Some(_), None) => RunSelector::for_config(cfg, env),
        (None, _) => RunSelector::Uniform(UniformSelector),
    };
    let seed = ckpt.state.seed;
    let n_snapshots = snapshot_count(cfg);
    let mut rows = Vec::new();

    let es_err = |source| HarnessError::Es {
        replication: rep,
        source,
    };

    loop {
        if opts.stop_after.is_some_and(|g| ckpt.state.generation >= g) {
            break;
        }
        let gen_log = run_generation(&mut ckpt.state, &cfg.es, &mut selector, env, exec).map_err(es_err)?;
        ckpt.cum_steps += gen_log.steps;
        let g = gen_log.generation;
        let row = GenerationRow {
            replication: rep,
            generation: g,
            cum_steps: ckpt.cum_steps,
            parent_score: gen_log.parent_score,
            offspring_mean: gen_log.offspring_mean,
            offspring_max: gen_log.offspring_max,
        };
        if let Some(w) = log.as_mut() {
            w.append(&row)?;
        }
        rows.push(row);

        if g % cfg.progress_interval == 0 {
            log::info!(
                "rep {rep} gen {g} steps {} parent {:.2} offspring mean {:.2}",
                ckpt.cum_steps,
                gen_log.parent_score,
                gen_log.offspring_mean
            );
        }

        let done = ckpt.cum_steps >= cfg.budget;
        if g % cfg.checkpoint_interval == 0 || done {
            let score = screen(&ckpt.state.theta, env, cfg, seed, exec)?;
            if ckpt.best.as_ref().is_none_or(|b| score > b.score) {
                ckpt.best = Some(BestAgent {
                    generation: g,
                    score,
                    theta: ckpt.state.theta.clone(),
                });
            }
        }
        ckpt.finished = done;

        while ckpt.next_snapshot <= n_snapshots && ckpt.cum_steps >= milestone(cfg, ckpt.next_snapshot) {
            if let Some(d) = &dir {
                let mut snap = ckpt.clone();
                snap.selector = selector.state().cloned();
                snap.next_snapshot += 1;
                snap.save(&d.join("snapshots").join(format!("snap_{:02}.ckpt", ckpt.next_snapshot)))?;
            }
            ckpt.next_snapshot += 1;
        }

        let at_interval = g % cfg.checkpoint_interval == 0;
        let stopping = opts.stop_after.is_some_and(|s| g >= s);
        if at_interval || done || stopping {
            ckpt.selector = selector.state().cloned();
            if let (Some(d), Some(w)) = (&dir, log.as_mut()) {
                w.flush()?;
                ckpt.save(&d.join("checkpoint.ckpt"))?;
            }
        }
        if done {
            log::info!("rep {rep} finished at gen {g} with {} steps", ckpt.cum_steps);
            break;
        }
    }
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    ckpt.selector = selector.state().cloned();
    Ok(ReplicationResult {
        replication: rep,
        rows,
        checkpoint: ckpt,
        resumed_from,
    })
}

/// Runs (or, with `opts.resume`, continues) every replication and writes
/// the merged logs and learning curve. Replication `r` uses seed
/// `cfg.seed + r`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    exec: &Executor,
) -> Result<Vec<ReplicationResult>, HarnessError> {
    cfg.validate()?;
    let env = cfg.build_env();
    let env: &dyn Environment = env.as_ref();
    let header = ArtifactHeader::new(cfg, &opts.overrides);

    if let Some(out) = &opts.out_dir {
        std::fs::create_dir_all(out).map_err(HarnessError::io("creating", out))?;
        let cfg_path = out.join("config.ini");
        if !opts.resume {
            if checkpoint_path(out, 0).exists() {
                return Err(HarnessError::Invalid(format!(
                    "{} already holds a run; use resume or pick another directory",
                    out.display()
                )));
            }
            let text = format!("{}\n{}", header.line(), cfg.render());
            std::fs::write(&cfg_path, text).map_err(HarnessError::io("writing", &cfg_path))?;
        }
    }

    let mut results = Vec::with_capacity(cfg.replications);
    for rep in 0..cfg.replications {
        let existing = opts
            .out_dir
            .as_ref()
            .map(|o| checkpoint_path(o, rep))
            .filter(|p| opts.resume && p.exists());
        let result = match existing {
            Some(path) => {
                let ckpt = RunCheckpoint::load(&path)?;
                if ckpt.config_hash != cfg.hash() {
                    return Err(HarnessError::ConfigMismatch {
                        path: path.display().to_string(),
                        found: ckpt.config_hash,
                        expected: cfg.hash(),
                    });
                }
                if ckpt.finished {
                    log::info!("rep {rep} already finished at generation {}", ckpt.generation());
                } else {
                    log::info!("rep {rep} resuming from generation {}", ckpt.generation());
                }
                resume_replication(cfg, env, ckpt, opts, exec)?
            }
            None => run_replication(cfg, env, rep, opts, exec)?,
        };
        results.push(result);
    }

    if let Some(out) = &opts.out_dir {
        let mut all = Vec::new();
        for rep in 0..cfg.replications {
            let path = rep_dir(out, rep).join("generations.csv");
            let rows: Vec<GenerationRow> = read_rows(&path)?;
            all.extend(rows);
        }
        write_generations(&out.join("generations.csv"), &header, &all)?;
        let curve = learning_curve(&all, cfg.budget, CURVE_POINTS, cfg.seed);
        write_learning_curve(&out.join("learning_curve.csv"), &header, &curve)?;
    }
    Ok(results)
}
