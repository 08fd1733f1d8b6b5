use alter_bench::synthetic_graph;
use alter_core::alga::{adaptive_factors_from_graph, encode_graph, long_range_embedding, rw_kernel, KernelOptions};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn embedding(c: &mut Criterion) {
    let g = synthetic_graph(0);
    let f = adaptive_factors_from_graph(&g).unwrap();
    let kernel = rw_kernel(&f, &g.a).unwrap();
    let mut group = c.benchmark_group("long_range_embedding");
    for k in [2, 16, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| long_range_embedding(black_box(&kernel), k).unwrap())
        });
    }
    group.finish();
    c.bench_function("encode_graph/k16", |b| {
        b.iter(|| encode_graph(black_box(&g), 16, KernelOptions::default()).unwrap())
    });
}

criterion_group!(benches, embedding);
criterion_main!(benches);
