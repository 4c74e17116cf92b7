use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nlpm_core::operators::{build_midpoint, build_trivial_singular, sum, FarField};
use nlpm_core::stepper::step;
use nlpm_core::{make_grid, uniform_time_grid, GridFunction, LevyMeasure, Nonlinearity, SchemeSpec, SolverPolicy};
use std::hint::black_box;

fn one_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    g.sample_size(20);
    let mu = LevyMeasure::fractional_laplacian(1, 1.0).unwrap();
    let policy = SolverPolicy::default();
    for &n in &[512usize, 4096] {
        let h = 8.0 / n as f64;
        let grid = make_grid(&[(-4.0, 4.0)], h).unwrap();
        let op =
            sum(&[build_midpoint(&mu, h, h, 8.0, FarField::Absorb).unwrap(), build_trivial_singular(1, h).unwrap()])
                .unwrap();
        let u0 = GridFunction::point_sample(&grid, |x| (-x[0].powi(8)).exp());
        for (name, theta, phi) in [
            ("explicit_power2", 0.0, Nonlinearity::power(2.0).unwrap()),
            ("implicit_power2", 1.0, Nonlinearity::power(2.0).unwrap()),
            ("implicit_sqrt", 1.0, Nonlinearity::power(0.5).unwrap()),
        ] {
            let spec =
                SchemeSpec::theta(&grid, op.clone(), phi, theta, uniform_time_grid(0.1 * h, 0.1 * h).unwrap()).unwrap();
            g.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| black_box(step(&spec, &u0, 1, &policy).unwrap()))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, one_step);
criterion_main!(benches);
