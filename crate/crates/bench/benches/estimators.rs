use criterion::{criterion_group, criterion_main, Criterion};
use curvop::curvature::ggn;
use curvop::rla::{
    hutchinson_trace, hutchpp_trace, spectral_density, xdiag, xtrace, DensityOptions, ProbeSpec,
};
use curvop_bench::mlp_problem;

fn estimators(c: &mut Criterion) {
    let (risk, params) = mlp_problem(&[20, 30, 5], 64);
    let op = ggn(&risk, &params).unwrap();
    let mut g = c.benchmark_group("ggn-estimators");
    g.sample_size(20);
    g.bench_function("hutchinson-60", |b| {
        b.iter(|| hutchinson_trace(&op, &ProbeSpec::rademacher(60, 1)).unwrap())
    });
    g.bench_function("hutchpp-60", |b| {
        b.iter(|| hutchpp_trace(&op, 60, 1).unwrap())
    });
    g.bench_function("xtrace-60", |b| b.iter(|| xtrace(&op, 60, 1).unwrap()));
    g.bench_function("xdiag-60", |b| b.iter(|| xdiag(&op, 60, 1).unwrap()));
    g.bench_function("density-5x30", |b| {
        b.iter(|| spectral_density(&op, &DensityOptions::new(5, 30, 1)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, estimators);
criterion_main!(benches);
