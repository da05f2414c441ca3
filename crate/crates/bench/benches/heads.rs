use std::hint::black_box;

use cfx_bench::{dense, problem};
use cfx_core::loss::{grad_mc, grad_mi, Example};
use cfx_core::{train_mc, train_mi, McHead, McObjective, MiHead, TrainConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const SIZES: [usize; 3] = [64, 256, 512];

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    for n in SIZES {
        let p = problem(n, 2);
        let g = p.train.features(0);
        let mc = McHead::new(dense(n, 0.0), 0.5).unwrap();
        let mi = MiHead::new(dense(n, 0.1)).unwrap();
        group.bench_with_input(BenchmarkId::new("mc_train", n), &n, |b, _| {
            b.iter(|| mc.forward_train(black_box(g)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mc_infer", n), &n, |b, _| {
            b.iter(|| mc.forward_infer(black_box(g)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mi", n), &n, |b, _| b.iter(|| mi.forward(black_box(g)).unwrap()));
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient_batch32");
    for n in SIZES {
        let p = problem(n, 4);
        let batch: Vec<Example<'_>> = (0..32).map(|i| (p.train.features(i), 3)).collect();
        let mc = McHead::new(dense(n, 0.0), 0.5).unwrap();
        let mi = MiHead::new(dense(n, 0.1)).unwrap();
        let objective = McObjective::new(2.0);
        group.bench_with_input(BenchmarkId::new("mc", n), &n, |b, _| {
            b.iter(|| grad_mc(black_box(&batch), &mc, &p.classifier, &objective).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mi", n), &n, |b, _| {
            b.iter(|| grad_mi(black_box(&batch), &mi, &p.classifier, 1.0).unwrap())
        });
    }
    group.finish();
}

fn epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("one_epoch");
    group.sample_size(10);
    for n in [64, 256] {
        let p = problem(n, 100);
        let mut mc_cfg = TrainConfig::mc_default();
        mc_cfg.epochs = 1;
        let mut mi_cfg = TrainConfig::mi_default();
        mi_cfg.epochs = 1;
        group.bench_with_input(BenchmarkId::new("mc", n), &n, |b, _| {
            b.iter(|| train_mc(&p.train, &p.classifier, 3, &mc_cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mi", n), &n, |b, _| {
            b.iter(|| train_mi(&p.train, &p.classifier, 3, &mi_cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward, gradient, epoch);
criterion_main!(benches);
