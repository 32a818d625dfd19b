use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ssm_bench::{linear_fixture, pz_fixture};
use ssm_core::apf::{run_filter, FilterConfig, ProposalScheme};
use ssm_core::RngStream;

fn schemes(c: &mut Criterion) {
    let (model, y) = pz_fixture();
    let mut group = c.benchmark_group("pz_filter_m64");
    group.sample_size(20);
    for scheme in ProposalScheme::ALL {
        let cfg = FilterConfig::new(scheme, 64);
        group.bench_with_input(BenchmarkId::from_parameter(scheme), &cfg, |b, cfg| {
            b.iter(|| run_filter(&model, cfg, None, &[0.3, 0.1], &y, &RngStream::root(1)).unwrap())
        });
    }
    group.finish();
}

fn particles(c: &mut Criterion) {
    let (model, y) = linear_fixture(100);
    let mut group = c.benchmark_group("linear_pf0");
    for m in [64, 256, 1024] {
        let cfg = FilterConfig::new(ProposalScheme::Pf0, m);
        group.bench_with_input(BenchmarkId::from_parameter(m), &cfg, |b, cfg| {
            b.iter(|| run_filter(&model, cfg, None, &[0.5], &y, &RngStream::root(1)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, schemes, particles);
criterion_main!(benches);
