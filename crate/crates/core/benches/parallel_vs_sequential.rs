use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hiphop_core::flow::ShootingPoint;
use hiphop_core::parallel::Execution;
use hiphop_core::period;
use hiphop_core::solver::{self, NewtonOptions, SolverOptions, UBracket};
use hiphop_core::ProblemParams;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn opts(execution: Execution) -> SolverOptions {
    SolverOptions { newton: NewtonOptions { execution, ..NewtonOptions::default() }, ..SolverOptions::default() }
}

fn period_curve(c: &mut Criterion) {
    let params = ProblemParams::new(3, 1.0, 2.0).unwrap();
    let u_max = params.constants().u_max;
    let grid: Vec<f64> = (1..=256).map(|i| i as f64 / 257.0 * u_max).collect();
    let mut group = c.benchmark_group("period_curve_256");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| period::period_curve(&params, black_box(&grid), mode))
        });
    }
    group.finish();
}

fn jacobian_polish(c: &mut Criterion) {
    let params = ProblemParams::new(3, 1.0, 2.0).unwrap();
    let start = ShootingPoint::new(1.37168, 0.717282, 1.73494, 6.95831);
    let mut group = c.benchmark_group("polish_fd_jacobian");
    group.sample_size(20);
    for (name, mode) in MODES {
        let o = opts(mode);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| solver::polish(&params, black_box(&start), &o).unwrap())
        });
    }
    group.finish();
}

fn u_scan(c: &mut Criterion) {
    let params = ProblemParams::new(3, 1.0, 2.0).unwrap();
    let mut group = c.benchmark_group("massless_u_scan");
    group.sample_size(20);
    for (name, mode) in MODES {
        let o = opts(mode);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| solver::solve_massless_u(&params, 1.371672, 0.717282, 6.958312, UBracket::Scan, &o).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, period_curve, jacobian_polish, u_scan);
criterion_main!(benches);
