//! Wall time of a short fit for each method as the trial length and the
//! number of groups grow.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mdlag::{fit, Method};
use mdlag_bench::{dataset_over_m, dataset_over_t, fixed_iterations};

const ITERATIONS: usize = 3;

fn over_t(c: &mut Criterion) {
    let mut group = c.benchmark_group("iterations_over_T");
    group.sample_size(10);
    for (method, sizes) in [
        (Method::Frequency, &[32usize, 64, 128, 256, 512][..]),
        (Method::Inducing, &[64, 128, 256, 512][..]),
        (Method::Time, &[16, 32, 64, 128][..]),
    ] {
        for &t in sizes {
            let data = dataset_over_t(t);
            let config = fixed_iterations(method, ITERATIONS);
            group.bench_with_input(BenchmarkId::new(method.to_string(), t), &data, |b, data| {
                b.iter(|| fit(data, &config).expect("fit"))
            });
        }
    }
    group.finish();
}

fn over_m(c: &mut Criterion) {
    let mut group = c.benchmark_group("iterations_over_M");
    group.sample_size(10);
    for (method, sizes) in [
        (Method::Frequency, &[2usize, 4, 8, 16, 24][..]),
        (Method::Inducing, &[2, 4, 8, 16, 24][..]),
        (Method::Time, &[2, 4, 8][..]),
    ] {
        for &m in sizes {
            let data = dataset_over_m(m);
            let config = fixed_iterations(method, ITERATIONS);
            group.bench_with_input(BenchmarkId::new(method.to_string(), m), &data, |b, data| {
                b.iter(|| fit(data, &config).expect("fit"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, over_t, over_m);
criterion_main!(benches);
