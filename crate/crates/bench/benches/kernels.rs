use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kbb_core::diagnostics::{krylov_basis, oracle_kbb, QOperator};
use kbb_core::envs::{make_circular_walk, make_nonlinear, make_random_tabular};
use kbb_core::lstd::lstd_solve;
use kbb_core::mrp::solve_exact;
use kbb_core::regress::fit_residual;
use kbb_core::{Env, RegressorConfig, StateValueFn};
use std::hint::black_box;

fn exact_solve(c: &mut Criterion) {
    let model = make_random_tabular(300, 0.9, 0).unwrap();
    c.bench_function("solve_exact n=300", |b| {
        b.iter(|| solve_exact(black_box(&model)).unwrap())
    });
}

fn tree_fit(c: &mut Criterion) {
    let env = Env::nonlinear("nonlinear", make_nonlinear(0.99, 1).unwrap()).unwrap();
    let data = env.sample_transitions(10_000, 3).unwrap();
    let zero = StateValueFn::quadratic(nalgebra::DMatrix::zeros(3, 3), 0.0, None).unwrap();
    let config = RegressorConfig::default();
    let mut group = c.benchmark_group("boosted trees");
    group.sample_size(10);
    group.bench_function("fit_residual n=1e4", |b| {
        b.iter(|| fit_residual(&zero, black_box(&data), 0.99, &config, 5).unwrap())
    });
    group.finish();
}

fn lstd(c: &mut Criterion) {
    let model = make_circular_walk(200, 0.9, 1).unwrap();
    let qop = QOperator::new(&model).unwrap();
    let basis = krylov_basis(&qop, 10);
    let env = Env::tabular("circular", model).unwrap();
    let data = env.sample_transitions(100_000, 2).unwrap();
    c.bench_function("lstd_solve k=10 n=1e5", |b| {
        b.iter(|| lstd_solve(black_box(&basis), &data, 0.9).unwrap())
    });
}

fn oracle(c: &mut Criterion) {
    c.bench_function("oracle_kbb circular n=50", |b| {
        b.iter_batched(
            || make_circular_walk(50, 0.9, 1).unwrap(),
            |model| oracle_kbb(&model, 30).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, exact_solve, tree_fit, lstd, oracle);
criterion_main!(benches);
