use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use matchtu::equilibrium::{solve_equilibrium_gradient, solve_ipfp, SolverOptions};
use matchtu::estimation::{fit, Algorithm, FitOptions};
use matchtu::simulation::{simulate_micro_market, SimConfig};
use matchtu_bench::{exact_sample, margins, surplus};

fn equilibrium(c: &mut Criterion) {
    let mut group = c.benchmark_group("equilibrium");
    let opts = SolverOptions::with_tol(1e-10);
    for n in [10, 50, 200] {
        let (phi, m) = (surplus(n, n), margins(n, n));
        group.bench_with_input(BenchmarkId::new("ipfp", n), &n, |b, _| b.iter(|| solve_ipfp(black_box(&phi), &m, &opts).unwrap()));
    }
    for n in [10, 50] {
        let (phi, m) = (surplus(n, n), margins(n, n));
        group.bench_with_input(BenchmarkId::new("gradient", n), &n, |b, _| {
            b.iter(|| solve_equilibrium_gradient(black_box(&phi), &m, &opts).unwrap())
        });
    }
    group.finish();
}

fn micro(c: &mut Criterion) {
    let mut group = c.benchmark_group("micro_market");
    group.sample_size(20);
    let phi = surplus(2, 2);
    for per_type in [10usize, 100, 1000] {
        group.bench_with_input(BenchmarkId::from_parameter(per_type), &per_type, |b, &s| {
            b.iter(|| simulate_micro_market(&phi, &[s, s], &[s, s], &SimConfig::new(0, 1)).unwrap())
        });
    }
    group.finish();
}

fn estimation(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    let (sample, basis) = exact_sample(6);
    for algo in [Algorithm::Gradient, Algorithm::CoordinateHybrid, Algorithm::Mle, Algorithm::MaxScore] {
        group.bench_function(algo.to_string(), |b| b.iter(|| fit(black_box(&sample), &basis, &FitOptions::new(algo)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, equilibrium, micro, estimation);
criterion_main!(benches);
