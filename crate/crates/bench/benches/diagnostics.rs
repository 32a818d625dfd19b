use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ssm_bench::{chains, replicates};
use ssm_core::diagnostics::{car_direct, car_sorted, rhat_multivariate};

fn car(c: &mut Criterion) {
    let mut group = c.benchmark_group("car");
    for l in [50, 200] {
        let ll = replicates(l, 30.0);
        group.bench_with_input(BenchmarkId::new("sorted", l), &ll, |b, ll| {
            b.iter(|| car_sorted(ll).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("direct", l), &ll, |b, ll| {
            b.iter(|| car_direct(ll).unwrap())
        });
    }
    group.finish();
}

fn rhat(c: &mut Criterion) {
    let draws = chains(5000);
    c.bench_function("rhat_4x5000x2", |b| {
        b.iter(|| rhat_multivariate(&draws).unwrap())
    });
}

criterion_group!(benches, car, rhat);
criterion_main!(benches);
