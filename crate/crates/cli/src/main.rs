//! `cles`: run, resume, post-evaluate and compare curriculum ES experiments.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use es_curriculum::config::{parse_config_with_overrides, ExperimentConfig};
use es_curriculum::harness::checkpoint::RunCheckpoint;
use es_curriculum::harness::report::{
    load_posteval_groups, read_heatmap, selector_stats, write_heatmap, write_posteval,
    write_selector_stats, ArtifactHeader, PostEvalRecord, CORRECTION_FACTOR,
};
use es_curriculum::harness::run::{checkpoint_path, snapshot_paths, RunOptions};
use es_curriculum::harness::{compare, heatmap_difference, heatmap_evaluate, post_evaluate, run_experiment};
use es_curriculum::Executor;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cles", version, about = "Evolution strategies with curriculum selection of environmental conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every replication of an experiment.
    Run(RunArgs),
    /// Continue an interrupted run from its checkpoints.
    Resume(ResumeArgs),
    /// Score each replication's best agent on uniformly drawn conditions.
    Posteval(PostevalArgs),
    /// Evaluate snapshots on every heatmap condition.
    Heatmap(HeatmapArgs),
    /// Compare post-evaluation results of two or more methods.
    Compare(CompareArgs),
    /// Write a checkpoint's per-condition difficulty table.
    DumpDifficulty(DumpArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set es.sigma=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set run.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `--set run.budget=N`.
    #[arg(long)]
    budget: Option<u64>,
}

#[derive(Args)]
struct WorkerArgs {
    /// Evaluation threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Args)]
struct ResumeArgs {
    /// Defaults to the run directory's config.ini.
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Args)]
struct PostevalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; posteval.csv is written here.
    #[arg(long)]
    out: PathBuf,
    /// Evaluate these checkpoints instead of the run's replications.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Episodes per agent; defaults to `run.posteval_episodes`.
    #[arg(long)]
    episodes: Option<usize>,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; heatmap.csv is written here.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoints to evaluate, in column order. Defaults to the snapshots
    /// of `--replication`.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    replication: usize,
    /// Another method's heatmap.csv; writes heatmap_diff.csv (this minus
    /// baseline).
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// posteval.csv files.
    #[arg(required = true, num_args = 2..)]
    files: Vec<PathBuf>,
    /// Directory for stats.json and stats.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bonferroni correction factor.
    #[arg(long, default_value_t = CORRECTION_FACTOR)]
    correction: usize,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long, required = true)]
    checkpoint: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{item}`"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            out.push(("run.seed".into(), seed.to_string()));
        }
        if let Some(budget) = self.budget {
            out.push(("run.budget".into(), budget.to_string()));
        }
        Ok(out)
    }

    /// Reads `--config`, falling back to `<run_dir>/config.ini`.
    fn load(&self, run_dir: Option<&Path>) -> Result<(ExperimentConfig, Vec<(String, String)>)> {
        let path = match (&self.config, run_dir) {
            (Some(p), _) => p.clone(),
            (None, Some(d)) => d.join("config.ini"),
            (None, None) => bail!("--config is required"),
        };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let overrides = self.overrides()?;
        let cfg = parse_config_with_overrides(&text, &overrides)
            .with_context(|| format!("in config {}", path.display()))?;
        cfg.validate()
            .with_context(|| format!("in config {}", path.display()))?;
        Ok((cfg, overrides))
    }
}

fn train(cfg: &ExperimentConfig, overrides: Vec<(String, String)>, out: &Path, resume: bool, workers: usize) -> Result<()> {
    let exec = Executor::new(workers);
    log::info!(
        "{} replications, budget {} steps, method {}, {} workers",
        cfg.replications,
        cfg.budget,
        cfg.method.label(),
        exec.workers()
    );
    let opts = RunOptions {
        out_dir: Some(out.to_path_buf()),
        resume,
        stop_after: None,
        overrides,
    };
    let results = run_experiment(cfg, &opts, &exec)?;
    if resume && results.iter().all(|r| r.rows.is_empty() && r.finished()) {
        eprintln!("every replication already finished; nothing to do");
    }
    for r in &results {
        let c = &r.checkpoint;
        let best = c.best.as_ref().map_or(f64::NAN, |b| b.score);
        println!(
            "{}",
            serde_json::json!({
                "replication": r.replication,
                "generation": c.generation(),
                "cum_steps": c.cum_steps,
                "finished": c.finished,
                "best_screening_score": best,
            })
        );
    }
    Ok(())
}

fn load_checked(path: &Path, cfg: &ExperimentConfig) -> Result<RunCheckpoint> {
    let ckpt = RunCheckpoint::load(path)?;
    if ckpt.config_hash != cfg.hash() {
        bail!(
            "{} was written with config {}, but the given config hashes to {}",
            path.display(),
            ckpt.config_hash,
            cfg.hash()
        );
    }
    Ok(ckpt)
}

fn posteval(args: &PostevalArgs) -> Result<()> {
    let (cfg, overrides) = args.config.load(Some(&args.out))?;
    let env = cfg.build_env();
    let exec = Executor::new(args.workers.workers);
    let episodes = args.episodes.unwrap_or(cfg.posteval_episodes);
    let paths: Vec<PathBuf> = if args.checkpoint.is_empty() {
        (0..cfg.replications).map(|r| checkpoint_path(&args.out, r)).collect()
    } else {
        args.checkpoint.clone()
    };
    let mut records = Vec::new();
    for path in &paths {
        let ckpt = load_checked(path, &cfg)?;
        if !ckpt.finished {
            log::warn!("{} is not finished (generation {})", path.display(), ckpt.generation());
        }
        let pe = post_evaluate(ckpt.best_theta(), env.as_ref(), episodes, ckpt.state.seed, &exec)?;
        log::info!("rep {} mean fitness {:.2} over {episodes} episodes", ckpt.replication, pe.mean);
        records.push(PostEvalRecord {
            replication: ckpt.replication,
            method: cfg.method.label(),
            mean_fitness: pe.mean,
            episodes: pe.episodes,
        });
    }
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("posteval.csv");
    write_posteval(&path, &ArtifactHeader::new(&cfg, &overrides), &records)?;
    let means: Vec<f64> = records.iter().map(|r| r.mean_fitness).collect();
    println!(
        "{}",
        serde_json::json!({
            "file": path.display().to_string(),
            "method": cfg.method.label(),
            "episodes": episodes,
            "mean_fitness": means,
        })
    );
    Ok(())
}

fn heatmap(args: &HeatmapArgs) -> Result<()> {
    let (cfg, overrides) = args.config.load(Some(&args.out))?;
    let env = cfg.build_env();
    let exec = Executor::new(args.workers.workers);
    let paths = if args.checkpoint.is_empty() {
        snapshot_paths(&args.out, args.replication)?
    } else {
        args.checkpoint.clone()
    };
    if paths.is_empty() {
        bail!("no checkpoints to evaluate");
    }
    let thetas = paths
        .iter()
        .map(|p| load_checked(p, &cfg).map(|c| c.state.theta))
        .collect::<Result<Vec<_>>>()?;
    log::info!(
        "{} checkpoints x {} conditions",
        thetas.len(),
        env.heatmap_space().total()
    );
    let matrix = heatmap_evaluate(&thetas, env.as_ref(), &exec)?;
    let header = ArtifactHeader::new(&cfg, &overrides);
    let method = cfg.method.label();
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("heatmap.csv");
    write_heatmap(&path, &header, &method, &matrix)?;
    println!("{}", path.display());
    if let Some(base) = &args.baseline {
        let (base_method, base_matrix) = read_heatmap(base)?;
        let diff = heatmap_difference(&matrix, &base_matrix)?;
        let path = args.out.join("heatmap_diff.csv");
        write_heatmap(&path, &header, &format!("{method}-{base_method}"), &diff)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn compare_cmd(args: &CompareArgs) -> Result<()> {
    let paths: Vec<&Path> = args.files.iter().map(PathBuf::as_path).collect();
    let groups = load_posteval_groups(&paths)?;
    let report = compare(&groups, args.correction, args.seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    eprint!("{}", report.table());
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("stats.json"), &json)?;
        std::fs::write(out.join("stats.txt"), report.table())?;
    }
    println!("{json}");
    Ok(())
}

fn dump_difficulty(args: &DumpArgs) -> Result<()> {
    let ckpt = RunCheckpoint::load(&args.checkpoint)?;
    let Some(state) = &ckpt.selector else {
        bail!("{} has no curriculum state (standard method)", args.checkpoint.display());
    };
    let header = ArtifactHeader {
        config_hash: ckpt.config_hash.clone(),
        seed: ckpt.state.seed,
        overrides: Vec::new(),
    };
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!(
        "difficulty_rep{:02}_gen{}.csv",
        ckpt.replication,
        ckpt.generation()
    ));
    write_selector_stats(&path, &header, &selector_stats(state))?;
    println!("{}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let (cfg, overrides) = a.config.load(None)?;
            train(&cfg, overrides, &a.out, false, a.workers.workers)
        }
        Command::Resume(a) => {
            let (cfg, overrides) = a.config.load(Some(&a.out))?;
            if !checkpoint_path(&a.out, 0).exists() {
                bail!("{} has no checkpoints to resume", a.out.display());
            }
            train(&cfg, overrides, &a.out, true, a.workers.workers)
        }
        Command::Posteval(a) => posteval(&a),
        Command::Heatmap(a) => heatmap(&a),
        Command::Compare(a) => compare_cmd(&a),
        Command::DumpDifficulty(a) => dump_difficulty(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
