use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vstar_bench::{dense_jet, products, triple};

fn jet_multiply(c: &mut Criterion) {
    let mut group = c.benchmark_group("jet_multiply");
    for (dim, order) in [(4, 4), (8, 4), (8, 6)] {
        let a = dense_jet(dim, order, 1);
        let b = dense_jet(dim, order, 2);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("d{dim}_k{order}")),
            &(a, b),
            |bench, (a, b)| bench.iter(|| black_box(a).mul_truncating(black_box(b))),
        );
    }
    group.finish();
}

fn star_at(c: &mut Criterion) {
    let mut group = c.benchmark_group("star_at");
    let ([f, g, _], x) = triple(7, 4);
    for (name, sp) in products(2) {
        group.bench_function(name, |bench| bench.iter(|| sp.star_at(&f, &g, black_box(&x)).unwrap()));
    }
    group.finish();
}

fn associator(c: &mut Criterion) {
    let mut group = c.benchmark_group("associator_at");
    group.sample_size(20);
    let ([f, g, h], x) = triple(11, 4);
    for (name, sp) in products(2) {
        group.bench_function(name, |bench| {
            bench.iter(|| sp.associator_at(&f, &g, &h, black_box(&x)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, jet_multiply, star_at, associator);
criterion_main!(benches);
