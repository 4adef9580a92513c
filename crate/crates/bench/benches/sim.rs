use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use parabuck::sim::run;
use parabuck_bench::exp2_prefix;

fn bench_run(c: &mut Criterion) {
    let mut g = c.benchmark_group("run");
    g.sample_size(20);
    let s = exp2_prefix(0.1);
    g.bench_function("exp2_10k_steps", |b| b.iter(|| run(black_box(&s)).unwrap()));
    let mut recorded = s.clone();
    recorded.decimate = 1;
    g.bench_function("exp2_10k_steps_recorded", |b| {
        b.iter(|| run(black_box(&recorded)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench_run);
criterion_main!(benches);
