//! Compares the data-parallel core against its sequential fallback on the
//! workloads that dominate real runs: the observed log-likelihood sweep, a
//! full E-step + CM iteration, and a small Monte Carlo study.
//!
//! The `parallel` feature is on by default; `with_thread_cap(1, ...)` forces
//! the same code through a single worker, which is the sequential baseline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use stlmm::fit::{cm_update_beta_sigma2, e_step};
use stlmm::model::{loglik, Family, LongDataset};
use stlmm::par::with_thread_cap;
use stlmm::sim::{generate_dataset, run_monte_carlo, McConfig, Scenario};
use stlmm::{FitConfig, InitStrategy};

fn study1(n: usize) -> (LongDataset, stlmm::model::Theta) {
    let scenario = Scenario::from_name("study1", Some(n), 42).unwrap();
    generate_dataset(&scenario, 0).unwrap()
}

fn bench_loglik(c: &mut Criterion) {
    let (data, theta) = study1(600);
    let mut group = c.benchmark_group("loglik_n600");
    for threads in [1usize, 2, 4] {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| with_thread_cap(t, || black_box(loglik(&theta, &data).unwrap())));
        });
    }
    group.finish();
}

fn bench_estep_sweep(c: &mut Criterion) {
    let (data, theta) = study1(600);
    let mut group = c.benchmark_group("estep_cm_sweep_n600");
    for threads in [1usize, 2, 4] {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| {
                with_thread_cap(t, || {
                    let moments: Vec<_> = {
                        #[cfg(feature = "parallel")]
                        {
                            use rayon::prelude::*;
                            data.subjects()
                                .par_iter()
                                .map(|s| e_step(&theta, s).unwrap())
                                .collect()
                        }
                        #[cfg(not(feature = "parallel"))]
                        {
                            data.subjects().iter().map(|s| e_step(&theta, s).unwrap()).collect()
                        }
                    };
                    black_box(cm_update_beta_sigma2(data.subjects(), &moments).unwrap())
                })
            });
        });
    }
    group.finish();
}

fn bench_small_mc(c: &mut Criterion) {
    let scenario = Scenario::from_name("study1", Some(60), 9).unwrap();
    let mut config = McConfig::default();
    config.fit = FitConfig::new(Family::SkewT)
        .with_rank(2)
        .with_init(InitStrategy::TrueValues);
    config.fit.max_iter = 15;
    config.fit.tolerance = 1e-4;
    config.compute_se_louis = false;
    let mut group = c.benchmark_group("mc_study_4reps_n60");
    group.sample_size(10);
    for threads in [1usize, 2] {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| with_thread_cap(t, || black_box(run_monte_carlo(&scenario, 4, &config).unwrap())));
        });
    }
    group.finish();
}

criterion_group!(benches, bench_loglik, bench_estep_sweep, bench_small_mc);
criterion_main!(benches);
