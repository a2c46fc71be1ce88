use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use curvop::curvature::{curvature_operator, KfacFlavor};
use curvop::rla::{probe, ProbeDistribution};
use curvop::{CurvatureKind, CurvatureSpec};
use curvop_bench::standard_mlp;

fn matvecs(c: &mut Criterion) {
    let (risk, params) = standard_mlp();
    let v = probe(ProbeDistribution::Normal, risk.num_params(), 0, 0);
    let mut g = c.benchmark_group("standard-mlp");
    g.sample_size(20);
    g.bench_function("gradient", |b| b.iter(|| risk.gradient(&params).unwrap()));
    let specs = [
        ("hessian", CurvatureSpec::Exact(CurvatureKind::Hessian)),
        ("ggn", CurvatureSpec::Exact(CurvatureKind::Ggn)),
        (
            "emp-fisher",
            CurvatureSpec::Exact(CurvatureKind::EmpiricalFisher),
        ),
        (
            "mc-fisher",
            CurvatureSpec::Exact(CurvatureKind::MonteCarloFisher {
                samples: 1,
                seed: 0,
            }),
        ),
        ("kfac", CurvatureSpec::Kfac(KfacFlavor::Type2)),
    ];
    for (name, spec) in specs {
        let op = curvature_operator(&risk, &params, spec).unwrap();
        g.bench_with_input(BenchmarkId::new("matvec", name), &v, |b, v| {
            b.iter(|| op.apply(v).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, matvecs);
criterion_main!(benches);
