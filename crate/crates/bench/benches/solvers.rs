use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rbm_bench::{moving_walls, problem};
use rbm_core::adjoint_solver::{solve_adjoint, Targets};
use rbm_core::state_solver::{picard_solve, PicardOptions};
use rbm_core::CostWeights;

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    for n in [8, 12, 16] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| b.iter(|| problem(black_box(n))));
    }
    g.finish();
}

fn picard(c: &mut Criterion) {
    let mut g = c.benchmark_group("picard_solve");
    g.sample_size(10);
    for n in [8, 12] {
        let prob = problem(n);
        let ctl = moving_walls(&prob, 0.2);
        let opts = PicardOptions::default();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| picard_solve(&prob, black_box(&ctl), &opts).unwrap())
        });
    }
    g.finish();
}

fn adjoint(c: &mut Criterion) {
    let prob = problem(10);
    let ctl = moving_walls(&prob, 0.2);
    let (state, _) = picard_solve(&prob, &ctl, &PicardOptions::default()).unwrap();
    let targets = Targets::basic_state(&prob.grid, &prob.params).unwrap();
    let w = CostWeights { gamma1: 1.0, gamma2: 1.0, gamma3: 1.0, gamma4: 1e-2, gamma5: 1e-2, gamma6: 1e-2 };
    let mut g = c.benchmark_group("adjoint");
    g.sample_size(10);
    g.bench_function("solve_10", |b| b.iter(|| solve_adjoint(&prob, &state, &ctl, black_box(&targets), &w).unwrap()));
    g.finish();
}

criterion_group!(benches, assembly, picard, adjoint);
criterion_main!(benches);
