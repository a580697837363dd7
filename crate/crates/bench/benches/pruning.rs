use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use simprune::fixtures;
use simprune::{
    build_distance_matrix, build_pruning_plan, conv2d, empirical_distance_matrix, flops_count,
    hierarchical_cluster, Linkage, PruneConfig,
};
use simprune_bench::{conv_workload, layer_stats};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for channels in [16, 64] {
        let (x, k) = conv_workload(channels, channels, 16, 4, 0);
        group.bench_with_input(BenchmarkId::from_parameter(channels), &channels, |b, _| {
            b.iter(|| conv2d(black_box(&x), black_box(&k)).unwrap())
        });
    }
    group.finish();
}

fn distances(c: &mut Criterion) {
    let mut group = c.benchmark_group("distance_matrix");
    for channels in [64, 512] {
        let stats = layer_stats(channels, 0);
        group.bench_with_input(BenchmarkId::new("closed_form", channels), &stats, |b, s| {
            b.iter(|| build_distance_matrix(black_box(s)))
        });
    }
    let (x, _) = conv_workload(64, 1, 16, 16, 1);
    group.bench_function("empirical/64", |b| {
        b.iter(|| empirical_distance_matrix(black_box(&x)))
    });
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("hierarchical_cluster");
    for channels in [64, 256, 512] {
        let m = build_distance_matrix(&layer_stats(channels, 2))
            .normalize()
            .matrix;
        for linkage in Linkage::ALL {
            group.bench_with_input(BenchmarkId::new(linkage.name(), channels), &m, |b, m| {
                b.iter(|| hierarchical_cluster(black_box(m), 0.1, linkage).unwrap())
            });
        }
    }
    group.finish();
}

fn vgg(c: &mut Criterion) {
    let model = fixtures::vgg16_cifar(10, 0);
    let config = PruneConfig::with_threshold(0.1);
    c.bench_function("vgg16/plan", |b| {
        b.iter(|| build_pruning_plan(black_box(&model), &config).unwrap())
    });
    c.bench_function("vgg16/flops", |b| {
        b.iter(|| flops_count(black_box(&model), 1).unwrap())
    });
}

criterion_group!(benches, conv, distances, clustering, vgg);
criterion_main!(benches);
