//! Benchmarks for the shooting pipeline; run with `cargo bench -p qshoot-bench`.

use criterion::{black_box, BenchmarkId, Criterion};
use qshoot_core::{linearization, shooting, verify, Nonlinearity, Problem, ProblemConfig, Suite};

fn problem(nl: Nonlinearity, n: u32) -> Problem {
    Problem::new(nl, ProblemConfig::with_n(n)).expect("valid problem")
}

pub fn shoot(c: &mut Criterion) {
    let mut g = c.benchmark_group("shoot");
    let cases = [
        (
            "bessel",
            problem(Nonlinearity::linear(1.0).unwrap(), 2),
            1.0,
        ),
        (
            "liouville",
            problem(Nonlinearity::exp(1.0).unwrap(), 2),
            5.0,
        ),
        (
            "u_exp_u2",
            problem(Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap(), 2),
            4.0,
        ),
        ("family_ii_n3", problem(verify::family_ii(), 3), 6.0),
        (
            "exp_u15_large",
            problem(Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5).unwrap(), 2),
            200.0,
        ),
    ];
    for (name, p, gamma) in &cases {
        g.bench_with_input(BenchmarkId::from_parameter(name), gamma, |b, &gamma| {
            b.iter(|| shooting::shoot(p, black_box(gamma)).unwrap())
        });
    }
    g.finish();
}

pub fn sweep(c: &mut Criterion) {
    let p = problem(verify::family_ii(), 2);
    let grid = shooting::log_grid(2.0, 12.0, 21).unwrap();
    let mut g = c.benchmark_group("sweep");
    g.sample_size(20);
    g.bench_function("family_ii_21", |b| {
        b.iter(|| shooting::sweep(&p, black_box(&grid), false).unwrap())
    });
    g.bench_function("family_ii_21_derivative", |b| {
        b.iter(|| shooting::sweep(&p, black_box(&grid), true).unwrap())
    });
    g.finish();
}

pub fn linearize(c: &mut Criterion) {
    let p = problem(verify::family_ii(), 2);
    let mut g = c.benchmark_group("linearize");
    for gamma in [3.0, 8.0] {
        g.bench_with_input(BenchmarkId::new("solve_v1", gamma), &gamma, |b, &gamma| {
            b.iter(|| linearization::solve_v1(&p, black_box(gamma)).unwrap())
        });
    }
    g.finish();
}

pub fn suites(c: &mut Criterion) {
    let base = problem(Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap(), 2);
    let mut g = c.benchmark_group("verify");
    g.sample_size(10);
    for s in Suite::ALL {
        g.bench_function(s.name(), |b| b.iter(|| verify::run_suite(s, &base)));
    }
    g.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    shoot(c);
    sweep(c);
    linearize(c);
    suites(c);
}
