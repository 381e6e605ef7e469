use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ndarray::Array1;
use nmtvocab::speed::{output_layer_model, output_layer_step};
use std::hint::black_box;

const FULL: usize = 50_000;
const D_O: usize = 64;

fn output_layer(c: &mut Criterion) {
    let model = output_layer_model(FULL, D_O, 1).unwrap();
    let o = Array1::from_shape_fn(D_O, |k| ((k as f64) * 0.37).sin());
    let mut group = c.benchmark_group("output_layer");
    for size in [2_000usize, 6_000, 30_000, FULL] {
        let ids: Vec<u32> = (0..size as u32).collect();
        group.throughput(Throughput::Elements(size as u64));
        group.bench_with_input(BenchmarkId::from_parameter(size), &ids, |b, ids| {
            b.iter(|| output_layer_step(&model, black_box(&o), black_box(ids)))
        });
    }
    group.finish();
}

criterion_group!(benches, output_layer);
criterion_main!(benches);
