//! Throughput of the main building blocks.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fleetsched::env::{FleetEnv, NoopPolicy, RewardConfig};
use fleetsched::experiment::{evaluate_fleet, kernels_of};
use fleetsched::lsap::solve_lsap;
use fleetsched::nn::{ForwardCache, NetShape, PolicyNet};
use fleetsched::partition::{build_partition, distance_matrix};
use fleetsched::ppo::stream_rng;
use fleetsched_bench::{fleet, DeteriorationKernel, WeibullParams};
use rand::Rng;

fn kernel_build(c: &mut Criterion) {
    let params = WeibullParams::new(3.0, 40.0).unwrap();
    c.bench_function("kernel_build", |b| {
        b.iter(|| DeteriorationKernel::from_weibull(black_box(&params)).unwrap())
    });
    let kernel = DeteriorationKernel::from_weibull(&params).unwrap();
    c.bench_function("tta_exact", |b| b.iter(|| black_box(&kernel).expected_tta_exact().unwrap()));
    c.bench_function("tta_mc_1000", |b| {
        b.iter(|| black_box(&kernel).estimate_tta_mc(100, 1000, 7).unwrap())
    });
}

fn lsap(c: &mut Criterion) {
    let mut group = c.benchmark_group("lsap");
    for n in [10usize, 100, 500] {
        let mut rng = stream_rng(n as u64, 0);
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..100.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| solve_lsap(black_box(cost), n))
        });
    }
    group.finish();
}

fn partition(c: &mut Criterion) {
    let agents = fleet(100, 1).unwrap();
    let stats: Vec<_> = agents.iter().map(|a| a.tta).collect();
    let d = distance_matrix(&stats);
    c.bench_function("partition_100_30", |b| {
        b.iter(|| build_partition(black_box(&d), 30, 1000, &mut stream_rng(0, 1)).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let shape = NetShape {
        input: 8,
        hidden: 64,
        actions: 5,
    };
    let net = PolicyNet::new(shape, &mut stream_rng(3, 0));
    let obs = vec![0.5; shape.input];
    let mut cache = ForwardCache::default();
    c.bench_function("forward_8x64x5", |b| {
        b.iter(|| net.forward_cached(black_box(&obs), None, &mut cache).unwrap())
    });
    let d_logits = vec![0.1; shape.actions];
    let mut grad = vec![0.0; net.num_params()];
    c.bench_function("backward_8x64x5", |b| b.iter(|| net.backward(&cache, black_box(&d_logits), 0.3, &mut grad)));
}

fn rollout(c: &mut Criterion) {
    let agents = fleet(50, 2).unwrap();
    let env = FleetEnv::new(kernels_of(&agents), 500, 15, RewardConfig::default()).unwrap();
    c.bench_function("noop_rollouts_50x100", |b| b.iter(|| evaluate_fleet(&env, &NoopPolicy, 100, black_box(9))));
}

criterion_group!(benches, kernel_build, lsap, partition, forward, rollout);
criterion_main!(benches);
