use std::hint::black_box;

use coagkin::system::Rhs;
use coagkin::{integrate, CoagulationKernel, InitialRule, SolverConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn rhs(c: &mut Criterion) {
    let mut group = c.benchmark_group("rhs");
    for kernel in CoagulationKernel::catalog() {
        for k in [64usize, 256] {
            let xi = InitialRule::Geometric { ratio: 0.9 }.build(k, 1.0).unwrap();
            let mut eval = Rhs::new(&kernel, k).unwrap();
            let mut out = vec![0.0; k];
            group.bench_with_input(BenchmarkId::new(kernel.name.clone(), k), &k, |b, _| {
                b.iter(|| eval.eval(black_box(xi.values()), &mut out).unwrap());
            });
        }
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("integrate");
    group.sample_size(20);
    let config = SolverConfig::new(10.0);
    for kernel in [CoagulationKernel::constant(1.0), CoagulationKernel::additive(1.0)] {
        let init = InitialRule::Monomer.build(64, 1.0).unwrap();
        group.bench_function(format!("{}/k=64,T=10", kernel.name), |b| {
            b.iter(|| integrate(black_box(&init), &kernel, &config).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, rhs, solve);
criterion_main!(benches);
