use std::sync::Arc;

use nlpm_core::grid::TimeGrid;
use nlpm_core::operators::{build_midpoint, build_trivial_singular, sum, FarField};
use nlpm_core::reference::FnSource;
use nlpm_core::stepper::{evolve, MassTracker, Observer, StepDiagnostics};
use nlpm_core::{
    make_grid, uniform_time_grid, Grid, GridFunction, LevyMeasure, Nonlinearity, Result, SchemeSpec, SolverPolicy,
    StencilOperator,
};
use proptest::prelude::*;

const N_HALF: f64 = 4.0;
const H: f64 = 0.125;
const T: f64 = 0.2;

fn grid() -> Grid {
    make_grid(&[(-N_HALF, N_HALF)], H).unwrap()
}

fn operator(alpha: f64, far: FarField) -> StencilOperator {
    let mu = LevyMeasure::fractional_laplacian(1, alpha).unwrap();
    sum(&[build_midpoint(&mu, H, H, 2.0 * N_HALF, far).unwrap(), build_trivial_singular(1, H).unwrap()]).unwrap()
}

fn phi(k: usize) -> Nonlinearity {
    match k {
        0 => Nonlinearity::power(2.0).unwrap(),
        1 => Nonlinearity::stefan(1.0, 0.5).unwrap(),
        _ => Nonlinearity::plateau(0.2, 0.4).unwrap(),
    }
}

#[derive(Clone, Debug)]
struct Case {
    alpha: f64,
    theta: f64,
    phi: usize,
    far: FarField,
    u0: Vec<f64>,
    /// amplitude of the forcing `c (1 + t) exp(-x^2)`
    forcing: f64,
}

fn len() -> usize {
    grid().len()
}

fn case() -> impl Strategy<Value = Case> {
    (
        0.3..1.7f64,
        prop_oneof![Just(0.0), Just(1.0)],
        0..3usize,
        prop_oneof![Just(FarField::Drop), Just(FarField::Absorb)],
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..2.0f64], len()),
        prop_oneof![Just(0.0), 0.0..1.0f64],
    )
        .prop_map(|(alpha, theta, phi, far, u0, forcing)| Case { alpha, theta, phi, far, u0, forcing })
}

fn source(c: f64) -> Arc<FnSource> {
    Arc::new(FnSource::new(&grid(), move |x, t| c * (1.0 + t) * (-x[0] * x[0]).exp()))
}

/// Bound on `|U|` over the run, used to size explicit steps.
fn envelope(c: &Case, u0: &[f64]) -> f64 {
    u0.iter().fold(0.0f64, |m, v| m.max(v.abs())) + T * c.forcing * (1.0 + T)
}

fn spec(c: &Case, bound: f64) -> Result<SchemeSpec> {
    let g = grid();
    let build = |time: TimeGrid| -> Result<SchemeSpec> {
        SchemeSpec::theta(&g, operator(c.alpha, c.far), phi(c.phi), c.theta, time)?.with_source(source(c.forcing), 1.0)
    };
    let probe = build(uniform_time_grid(T, T)?)?;
    let dt = match probe.cfl_max_dt(bound)? {
        Some(dt) => (0.9 * dt).min(0.02),
        None => 0.02,
    };
    build(uniform_time_grid(T, dt)?)
}

fn run(c: &Case, u0: &[f64], bound: f64, obs: &mut [&mut dyn Observer]) -> GridFunction {
    let s = spec(c, bound).unwrap();
    let u0 = GridFunction::from_values(&grid(), u0.to_vec()).unwrap();
    evolve(&s, &u0, &policy(), obs).unwrap().0
}

fn policy() -> SolverPolicy {
    SolverPolicy { tol: 1e-13, ..SolverPolicy::default() }
}

/// Records `max_j |U^j|_inf` and the forcing budget `sum_j dt_j |F^j|_inf`.
#[derive(Default)]
struct SupNorm {
    max: f64,
    times: Vec<f64>,
}

impl Observer for SupNorm {
    fn observe(&mut self, _j: usize, t: f64, u: &GridFunction, _d: &StepDiagnostics) -> Result<()> {
        self.max = self.max.max(u.norm_linf());
        self.times.push(t);
        Ok(())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn mass_balance_with_boundary_flux(c in case()) {
        let u0 = GridFunction::from_values(&grid(), c.u0.clone()).unwrap();
        let mut tracker = MassTracker::new(&u0);
        run(&c, &c.u0, envelope(&c, &c.u0), &mut [&mut tracker]);
        let scale = tracker.mass.iter().chain(tracker.flux.iter()).chain(tracker.source.iter())
            .fold(u0.integral().abs(), |m, v| m.max(v.abs())).max(1e-300);
        for (j, d) in tracker.defects().iter().enumerate() {
            prop_assert!(d.abs() <= 1e-8 * scale, "step {}: defect {} against {}", j + 1, d, scale);
        }
    }

    #[test]
    fn comparison_principle(c in case(), bump in prop::collection::vec(0.0..1.0f64, len())) {
        let v0: Vec<f64> = c.u0.iter().zip(&bump).map(|(u, b)| u + b).collect();
        let bound = envelope(&c, &v0);
        let u = run(&c, &c.u0, bound, &mut []);
        let v = run(&c, &v0, bound, &mut []);
        for (a, b) in u.values().iter().zip(v.values()) {
            prop_assert!(*a <= *b + 1e-10, "{} > {}", a, b);
        }
    }

    #[test]
    fn l1_contraction(c in case(), other in prop::collection::vec(0.0..2.0f64, len())) {
        let bound = envelope(&c, &c.u0).max(envelope(&c, &other));
        let u = run(&c, &c.u0, bound, &mut []);
        let v = run(&c, &other, bound, &mut []);
        let g = grid();
        let d0 = GridFunction::from_values(&g, c.u0.clone()).unwrap()
            .sub(&GridFunction::from_values(&g, other.clone()).unwrap()).unwrap().norm_l1();
        let d = u.sub(&v).unwrap().norm_l1();
        prop_assert!(d <= d0 * (1.0 + 1e-10) + 1e-12, "{} > {}", d, d0);
    }

    #[test]
    fn sup_norm_bound(c in case()) {
        let mut sup = SupNorm::default();
        run(&c, &c.u0, envelope(&c, &c.u0), &mut [&mut sup]);
        // backward-Euler forcing F^j = g(t_j), |g(., t)|_inf = c (1 + t)
        let mut budget = c.u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut t_prev = 0.0;
        for &t in &sup.times {
            budget += (t - t_prev) * c.forcing * (1.0 + t);
            t_prev = t;
        }
        prop_assert!(sup.max <= budget * (1.0 + 1e-12) + 1e-12, "{} > {}", sup.max, budget);
    }
}
