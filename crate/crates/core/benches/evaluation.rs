//! Sequential versus rayon-backed evaluation of episode batches.
//!
//! Run with `cargo bench -p es-curriculum`. Building with
//! `--no-default-features` makes both executors sequential, which is a
//! quick way to check the fallback path costs nothing extra.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use es_curriculum::curriculum::{CurriculumConfig, CurriculumSelector, DifficultyFunction};
use es_curriculum::envs::{DoublePole, DoublePoleConfig};
use es_curriculum::es::{run_generation, EsConfig, EsState};
use es_curriculum::harness::post_evaluate;
use es_curriculum::{Environment, Executor};
use std::hint::black_box;

fn executors() -> Vec<(&'static str, Executor)> {
    vec![("sequential", Executor::sequential()), ("parallel", Executor::new(0))]
}

fn trained_like(dim: usize) -> Vec<f64> {
    (0..dim).map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 0.4).collect()
}

fn bench_post_eval(c: &mut Criterion) {
    let env = DoublePole::new(DoublePoleConfig::default());
    let theta = trained_like(env.param_count());
    let mut group = c.benchmark_group("post_eval_200");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| post_evaluate(black_box(&theta), &env, 200, 1, exec).unwrap().mean)
        });
    }
    group.finish();
}

fn bench_generation(c: &mut Criterion) {
    let env = DoublePole::new(DoublePoleConfig::default());
    let cfg = EsConfig::default();
    let mut group = c.benchmark_group("double_pole_generation");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| {
                let mut state = EsState::from_theta(trained_like(env.param_count()), 3);
                let mut selector = CurriculumSelector::new(
                    CurriculumConfig {
                        difficulty: DifficultyFunction::Power(3.0),
                        ..Default::default()
                    },
                    env.space().total(),
                    100,
                );
                run_generation(&mut state, &cfg, &mut selector, &env, exec).unwrap().steps
            })
        });
    }
    group.finish();
}

fn bench_episode(c: &mut Criterion) {
    let env = DoublePole::new(DoublePoleConfig::default());
    let theta = trained_like(env.param_count());
    let centre = env.space().total() as u32 / 2;
    c.bench_function("double_pole_episode", |b| {
        b.iter(|| env.run_episode(black_box(&theta), es_curriculum::ConditionId(centre)).unwrap())
    });
}

criterion_group!(benches, bench_episode, bench_post_eval, bench_generation);
criterion_main!(benches);
