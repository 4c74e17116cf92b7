use nlpm_core::reference::{
    cauchy_kernel, fractional_laplacian_oracle, manufactured_rhs, Amplitude, Barenblatt, ReferenceSolution,
    SeparableSolution,
};
use nlpm_core::Nonlinearity;
use statrs::function::gamma::gamma;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

/// `(-Delta)^s e^{-x^2} = 4^s Gamma(s + 1/2) / Gamma(1/2) 1F1(s + 1/2; 1/2; -x^2)`,
/// evaluated through Kummer's transformation `e^{-x^2} 1F1(-s; 1/2; x^2)`.
fn gaussian_fractional_laplacian(s: f64, x: f64) -> f64 {
    let z = x * x;
    let (mut term, mut sum) = (1.0, 1.0);
    for n in 0..400 {
        let nf = n as f64;
        term *= (-s + nf) / (0.5 + nf) * z / (nf + 1.0);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() && nf > z {
            break;
        }
    }
    4f64.powf(s) * gamma(s + 0.5) / gamma(0.5) * (-z).exp() * sum
}

#[test]
fn barenblatt_lambda_matches_closed_form() {
    let (alpha, m) = (1.5, 0.6);
    let b = Barenblatt::new(alpha, m).unwrap();
    let beta = 1.0 / (m - 1.0 + alpha);
    let inner = 2f64.powf(alpha - 1.0) / beta * gamma((1.0 + alpha) / 2.0) / gamma((3.0 - alpha) / 2.0);
    let lambda = inner.powf(1.0 / (1.0 - m));
    assert!(close(b.beta, beta, 1e-14));
    assert!(close(b.lambda, lambda, 1e-12), "{} vs {}", b.lambda, lambda);
    assert!(close(b.lambda, 1.420_242_249_891_406_4, 1e-12));
}

#[test]
fn manufactured_rhs_at_origin() {
    // v = (t+1) e^{-x^2}, phi(v) = e^{-2x^2} at t = 0: g(0,0) = 1 + (-Delta)^{1/4} e^{-2x^2}(0)
    let sol = ReferenceSolution::Separable(SeparableSolution::new(Amplitude::Linear, 2.0).unwrap());
    let phi = Nonlinearity::power(2.0).unwrap();
    let alpha: f64 = 0.5;
    let a: f64 = 2.0;
    let frac = (std::f64::consts::PI / a).sqrt() / std::f64::consts::PI
        * 0.5
        * (4.0 * a).powf((alpha + 1.0) / 2.0)
        * gamma((alpha + 1.0) / 2.0);
    let g = manufactured_rhs(&sol, &phi, alpha, 0.0, 0.0).unwrap();
    assert!((g - (1.0 + frac)).abs() < 5e-11, "{g} vs {}", 1.0 + frac);
    assert!((g - 2.162_736_634_038_237).abs() < 5e-11);
}

#[test]
fn oracle_is_linear() {
    let f = |y: f64| (-y * y).exp();
    let g = |y: f64| 1.0 / (1.0 + y * y);
    for &alpha in &[0.3, 1.0, 1.7] {
        for &x in &[0.0, 0.7, 3.0] {
            let lf = fractional_laplacian_oracle(alpha, &f, &[], 8.0, x).unwrap();
            let lg = fractional_laplacian_oracle(alpha, &g, &[], 8.0, x).unwrap();
            let combo = |y: f64| 2.0 * f(y) - 0.5 * g(y);
            let lc = fractional_laplacian_oracle(alpha, &combo, &[], 8.0, x).unwrap();
            assert!(
                (lc - (2.0 * lf - 0.5 * lg)).abs() < 1e-10 * lc.abs().max(1.0),
                "alpha {alpha} x {x}: {lc} vs {}",
                2.0 * lf - 0.5 * lg
            );
        }
    }
}

#[test]
fn oracle_matches_hypergeometric_form() {
    for &alpha in &[0.25, 0.5, 1.0, 1.5, 1.9] {
        for &x in &[0.0, 0.3, 1.0, 1.7, 2.5] {
            let l = fractional_laplacian_oracle(alpha, &|y: f64| (-y * y).exp(), &[], 8.0, x).unwrap();
            let exact = -gaussian_fractional_laplacian(alpha / 2.0, x);
            assert!((l - exact).abs() < 1e-10, "alpha {alpha} x {x}: {l} vs {exact}");
        }
    }
}

#[test]
fn oracle_on_cauchy_kernel() {
    // the half Laplacian of t/(t^2+x^2) is -d_t of itself
    for &x in &[0.0, 0.5, 2.0, 7.0] {
        let l = fractional_laplacian_oracle(1.0, &|y: f64| cauchy_kernel(y, 1.0), &[], 20.0, x).unwrap();
        let dt = (x * x - 1.0) / (1.0 + x * x).powi(2);
        assert!((l - dt).abs() < 1e-10, "x {x}: {l} vs {dt}");
    }
}

fn residual_points() -> Vec<(f64, f64)> {
    (0..20).map(|i| (-9.5 + i as f64, 0.05 * i as f64)).collect()
}

#[test]
fn heat_solution_has_zero_residual() {
    for (x, t) in residual_points() {
        let g = manufactured_rhs(&ReferenceSolution::FractionalHeat, &Nonlinearity::Identity, 1.0, x, t).unwrap();
        assert!(g.abs() < 1e-9, "x {x} t {t}: {g}");
    }
}

#[test]
fn barenblatt_has_zero_residual() {
    // the profile is exact on the curve m (1 + alpha) = 3 - alpha
    for &(alpha, m) in &[(1.5, 0.6), (1.2, 1.8 / 2.2), (0.8, 2.2 / 1.8)] {
        let b = Barenblatt::new(alpha, m).unwrap();
        let sol = ReferenceSolution::Barenblatt(b);
        let phi = Nonlinearity::power(m).unwrap();
        for (x, t) in residual_points() {
            let g = manufactured_rhs(&sol, &phi, alpha, x, t).unwrap();
            assert!(g.abs() < 1e-8, "alpha {alpha} m {m} x {x} t {t}: {g}");
        }
    }
}
