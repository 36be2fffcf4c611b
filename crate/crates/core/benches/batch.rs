//! Compares the data-parallel batch map against the sequential fallback on
//! a rollout workload. Build with and without `--features parallel` (or
//! `--no-default-features`) to see both backends; `map_batch_seq` inside one
//! build is the in-process baseline.

use criterion::{criterion_group, criterion_main, Criterion};
use tspd_core::instance::{generate_instances, Family, Instance};
use tspd_core::oracle::greedy_nearest;
use tspd_core::par::{map_batch, map_batch_seq};
use tspd_core::rng::Rng;

fn workload() -> Vec<Instance> {
    generate_instances(20, 64, 99, Family::CornerDepot, 1.0, 2.0)
        .expect("generation succeeds")
        .instances
}

fn solve(inst: &Instance) -> f64 {
    let greedy = greedy_nearest(inst).expect("greedy solves").cost;
    let mut rng = Rng::new(5);
    let rollout = tspd_core::oracle::random_rollout(inst, &mut rng)
        .expect("rollout terminates")
        .cost();
    greedy.min(rollout)
}

fn bench_batches(c: &mut Criterion) {
    let insts = workload();
    let mut group = c.benchmark_group("rollout_batch");
    group.sample_size(10);
    group.bench_function("map_batch", |b| b.iter(|| map_batch(&insts, solve)));
    group.bench_function("map_batch_seq", |b| b.iter(|| map_batch_seq(&insts, solve)));
    group.finish();
}

criterion_group!(benches, bench_batches);
criterion_main!(benches);
