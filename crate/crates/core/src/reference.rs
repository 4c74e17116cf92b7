//! Exact solutions, a high-accuracy quadrature of the 1D fractional
//! Laplacian, and manufactured forcing terms.

use std::sync::Arc;

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::levy_measure::fractional_laplacian_constant;
use crate::nonlinearity::Nonlinearity;
use crate::quad::{integrate_pieces, integrate_to_infinity, Tol};
use crate::stepper::Source;

/// `K(x, t) = t / (t^2 + x^2)`; `K(x, t + 1)` solves `u_t = -(-Delta)^{1/2} u`.
pub fn cauchy_kernel(x: f64, t: f64) -> f64 {
    t / (t * t + x * x)
}

/// Self-similar solution of `u_t + (-Delta)^{alpha/2} u^m = 0` in 1D with
/// profile `(1 + y^2)^{-(1+alpha)/2}`. It is an exact solution only when
/// `m (1 + alpha) = 3 - alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Barenblatt {
    pub alpha: f64,
    pub m: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Barenblatt {
    pub fn new(alpha: f64, m: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        if !(m > 0.0 && m != 1.0) || m - 1.0 + alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!("need m != 1 and m - 1 + alpha > 0, got m = {m}")));
        }
        let beta = 1.0 / (m - 1.0 + alpha);
        let ln_inner =
            (alpha - 1.0) * 2f64.ln() - beta.ln() + ln_gamma(0.5 * (1.0 + alpha)) - ln_gamma(0.5 * (3.0 - alpha));
        let lambda = (ln_inner / (1.0 - m)).exp();
        Ok(Barenblatt { alpha, m, beta, lambda })
    }

    /// `lambda (t+1)^{-beta} (1 + (|x| (t+1)^{-beta})^2)^{-(alpha+1)/2}`.
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let s = (t + 1.0).powf(-self.beta);
        let y = x.abs() * s;
        self.lambda * s * (1.0 + y * y).powf(-0.5 * (self.alpha + 1.0))
    }

    pub fn dt(&self, x: f64, t: f64) -> f64 {
        let s = (t + 1.0).powf(-self.beta);
        let y2 = (x * s).powi(2);
        let dv_ds = self.lambda * (1.0 + y2).powf(-0.5 * (self.alpha + 3.0)) * (1.0 - self.alpha * y2);
        dv_ds * (-self.beta * s / (t + 1.0))
    }
}

/// High-accuracy evaluation of
/// `L[psi](x) = c_{1,alpha} int_0^inf (psi(x+z) + psi(x-z) - 2 psi(x)) z^{-1-alpha} dz`,
/// i.e. `-(-Delta)^{alpha/2} psi`.
///
/// `kinks` lists points where `psi` is not smooth; `support` bounds the
/// region outside of which `psi` is negligible (the remaining tail is
/// still integrated, by dyadic shells).
pub fn fractional_laplacian_oracle(
    alpha: f64,
    psi: &dyn Fn(f64) -> f64,
    kinks: &[f64],
    support: f64,
    x: f64,
) -> Result<f64> {
    fractional_laplacian_oracle_tol(alpha, psi, kinks, support, x, ORACLE_TOL)
}

pub const ORACLE_TOL: Tol = Tol::new(1e-14, 1e-12);

/// Tolerance for forcing terms. Near a kink of `psi` the second difference
/// loses digits to cancellation, so the oracle tolerance is out of reach
/// there when `alpha > 1`.
pub const SOURCE_TOL: Tol = Tol::new(1e-12, 1e-10);

pub fn fractional_laplacian_oracle_tol(
    alpha: f64,
    psi: &dyn Fn(f64) -> f64,
    kinks: &[f64],
    support: f64,
    x: f64,
    tol: Tol,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 2), got {alpha}")));
    }
    let c = fractional_laplacian_constant(1, alpha);
    let px = psi(x);
    let d = |z: f64| psi(x + z) + psi(x - z) - 2.0 * px;
    let dk = kinks.iter().map(|k| (x - k).abs()).fold(f64::INFINITY, f64::min);

    // near z = 0: D(z) = psi'' z^2 + psi'''' z^4 / 12 + O(z^6), both
    // coefficients from D(z0) and D(2 z0)
    let z0 = if dk < 1e-12 { 0.0 } else { (dk / 4.0).min(1e-3) };
    let mut inner = 0.0;
    if z0 > 0.0 {
        let (q1, q2) = (d(z0) / (z0 * z0), d(2.0 * z0) / (4.0 * z0 * z0));
        let second = (4.0 * q1 - q2) / 3.0;
        let fourth = (q2 - q1) / (3.0 * z0 * z0);
        inner += second * z0.powf(2.0 - alpha) / (2.0 - alpha) + fourth * z0.powf(4.0 - alpha) / (4.0 - alpha);
    }
    let mut pts: Vec<f64> = kinks.iter().map(|k| (x - k).abs()).collect();
    pts.push((x - support).abs());
    pts.push((x + support).abs());
    let f_in = |z: f64| d(z) * z.powf(-1.0 - alpha);
    if z0 > 0.0 {
        // rounding in D(z) integrates to about eps |psi(x)| z0^{-alpha} / alpha
        let floor = 16.0 * f64::EPSILON * px.abs() * z0.powf(-alpha) / alpha;
        let tol_in = Tol::new(tol.abs.max(floor), tol.rel);
        inner += integrate_pieces(f_in, z0, 1.0, &pts, tol_in)?;
    } else {
        inner += crate::quad::integrate_from_zero(f_in, 1.0, tol)?;
    }

    let z1 = (x.abs() + support).max(1.0);
    let f_out = |z: f64| (psi(x + z) + psi(x - z)) * z.powf(-1.0 - alpha);
    let mut outer = integrate_pieces(f_out, 1.0, z1, &pts, tol)?;
    outer += integrate_to_infinity(f_out, z1, tol)?;
    outer -= 2.0 * px / alpha;
    Ok(c * (inner + outer))
}

/// Time amplitude of a separable manufactured solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Amplitude {
    /// `t + 1`
    Linear,
    /// `sqrt(t + 1)`
    Sqrt,
}

impl Amplitude {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Amplitude::Linear => t + 1.0,
            Amplitude::Sqrt => (t + 1.0).sqrt(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Amplitude::Linear => 1.0,
            Amplitude::Sqrt => 0.5 / (t + 1.0).sqrt(),
        }
    }
}

/// `v(x, t) = a(t) exp(-|x|^p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparableSolution {
    pub amplitude: Amplitude,
    pub p: f64,
}

impl SeparableSolution {
    pub fn new(amplitude: Amplitude, p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("profile exponent must be positive, got {p}")));
        }
        Ok(SeparableSolution { amplitude, p })
    }

    pub fn shape(&self, x: f64) -> f64 {
        (-x.abs().powf(self.p)).exp()
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        self.amplitude.eval(t) * self.shape(x)
    }

    pub fn dt(&self, x: f64, t: f64) -> f64 {
        self.amplitude.derivative(t) * self.shape(x)
    }

    /// Radius beyond which `exp(-|x|^p)` is below 1e-19.
    pub fn support(&self) -> f64 {
        44f64.powf(1.0 / self.p)
    }

    /// Points where `v(., t)` crosses one of the levels.
    pub fn level_crossings(&self, t: f64, levels: &[f64]) -> Vec<f64> {
        let a = self.amplitude.eval(t);
        let mut out = Vec::new();
        for &l in levels {
            if l > 0.0 && l < a {
                let x = (a / l).ln().powf(1.0 / self.p);
                out.push(x);
                out.push(-x);
            }
        }
        out
    }
}

/// A solution with analytic time derivative, used to measure errors and to
/// build forcing terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReferenceSolution {
    /// `K(x, t + 1)`, the alpha = 1 heat solution.
    FractionalHeat,
    Barenblatt(Barenblatt),
    Separable(SeparableSolution),
}

impl ReferenceSolution {
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match self {
            ReferenceSolution::FractionalHeat => cauchy_kernel(x, t + 1.0),
            ReferenceSolution::Barenblatt(b) => b.eval(x, t),
            ReferenceSolution::Separable(s) => s.eval(x, t),
        }
    }

    pub fn dt(&self, x: f64, t: f64) -> f64 {
        match self {
            ReferenceSolution::FractionalHeat => {
                let s = t + 1.0;
                (x * x - s * s) / (s * s + x * x).powi(2)
            }
            ReferenceSolution::Barenblatt(b) => b.dt(x, t),
            ReferenceSolution::Separable(s) => s.dt(x, t),
        }
    }

    /// Scale beyond which the profile is small; used only to place
    /// quadrature breakpoints.
    pub fn support(&self) -> f64 {
        match self {
            ReferenceSolution::Separable(s) => s.support(),
            _ => 20.0,
        }
    }

    /// Points where `v(., t)` crosses one of the positive levels.
    pub fn level_crossings(&self, t: f64, levels: &[f64]) -> Vec<f64> {
        match self {
            ReferenceSolution::Separable(s) => s.level_crossings(t, levels),
            _ => {
                // both profiles are even and decreasing in |x|
                let top = self.eval(0.0, t);
                let mut out = Vec::new();
                for &l in levels {
                    if l > 0.0 && l < top {
                        let (mut a, mut b) = (0.0, 1.0);
                        while self.eval(b, t) > l {
                            b *= 2.0;
                        }
                        for _ in 0..200 {
                            let c = 0.5 * (a + b);
                            if self.eval(c, t) > l {
                                a = c;
                            } else {
                                b = c;
                            }
                        }
                        out.push(a);
                        out.push(-a);
                    }
                }
                out
            }
        }
    }
}

/// Values of `phi` at which it is not smooth.
pub fn breakpoints(phi: &Nonlinearity) -> Vec<f64> {
    match phi {
        Nonlinearity::Identity | Nonlinearity::Power { .. } => Vec::new(),
        Nonlinearity::Stefan { a, b } => vec![b / a],
        Nonlinearity::Plateau { lo, hi } => vec![*lo, *hi],
        Nonlinearity::Piecewise { knots } => knots.iter().map(|k| k.0).collect(),
        Nonlinearity::Regularized { base, .. } => breakpoints(base),
    }
}

/// `g = d_t v + (-Delta)^{alpha/2}[phi(v)]` at one point.
pub fn manufactured_rhs(sol: &ReferenceSolution, phi: &Nonlinearity, alpha: f64, x: f64, t: f64) -> Result<f64> {
    let kinks = sol.level_crossings(t, &breakpoints(phi));
    let psi = |y: f64| phi.eval(sol.eval(y, t));
    let l = fractional_laplacian_oracle_tol(alpha, &psi, &kinks, sol.support(), x, SOURCE_TOL)?;
    Ok(sol.dt(x, t) - l)
}

enum SourceMode {
    /// `g(x, t) = a'(t) w(x) - a(t)^m L[phi(w)](x)`.
    Separable { m: f64, w: Vec<f64>, lw: Vec<f64>, amplitude: Amplitude },
    /// Cubic interpolation in time of tabulated values.
    Tabulated { times: Vec<f64>, values: Vec<Vec<f64>> },
    /// Exact evaluation at every call.
    Direct { nodes: Vec<f64>, phi: Nonlinearity, alpha: f64 },
}

/// Manufactured forcing on the nodes of a 1D grid.
pub struct ManufacturedSource {
    sol: ReferenceSolution,
    mode: SourceMode,
}

impl ManufacturedSource {
    /// Picks the exact separable form when `phi` is a power (so that
    /// `phi(a w) = a^m phi(w)`), otherwise tabulates `g` at
    /// `table_points` equidistant times on `[0, t_final]` when
    /// `table_points >= 4`, or evaluates it directly at every step.
    pub fn new(
        sol: ReferenceSolution,
        phi: &Nonlinearity,
        alpha: f64,
        grid: &Grid,
        t_final: f64,
        table_points: usize,
    ) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::Unsupported("manufactured sources are implemented in 1D".into()));
        }
        let nodes = grid.axis_coords(0);
        let homogeneous = match phi {
            Nonlinearity::Identity => Some(1.0),
            Nonlinearity::Power { m } => Some(*m),
            _ => None,
        };
        let mode = if let (Some(m), ReferenceSolution::Separable(sep)) = (homogeneous, &sol) {
            let w: Vec<f64> = nodes.iter().map(|&x| sep.shape(x)).collect();
            let psi = |y: f64| phi.eval(sep.shape(y));
            let lw = nodes
                .par_iter()
                .map(|&x| fractional_laplacian_oracle(alpha, &psi, &[], sep.support(), x))
                .collect::<Result<Vec<_>>>()?;
            SourceMode::Separable { m, w, lw, amplitude: sep.amplitude }
        } else if table_points >= 4 {
            let times: Vec<f64> = (0..table_points).map(|k| t_final * k as f64 / (table_points - 1) as f64).collect();
            let values = times
                .iter()
                .map(|&t| {
                    nodes.par_iter().map(|&x| manufactured_rhs(&sol, phi, alpha, x, t)).collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            SourceMode::Tabulated { times, values }
        } else {
            SourceMode::Direct { nodes, phi: phi.clone(), alpha }
        };
        Ok(ManufacturedSource { sol, mode })
    }

    pub fn solution(&self) -> &ReferenceSolution {
        &self.sol
    }
}

impl Source for ManufacturedSource {
    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match &self.mode {
            SourceMode::Separable { m, w, lw, amplitude } => {
                let a = amplitude.eval(t);
                let da = amplitude.derivative(t);
                let am = a.powf(*m);
                for ((o, wi), li) in out.iter_mut().zip(w).zip(lw) {
                    *o = da * wi - am * li;
                }
            }
            SourceMode::Tabulated { times, values } => {
                let n = times.len();
                let dt = times[1] - times[0];
                let k = ((t / dt).floor() as isize - 1).clamp(0, n as isize - 4) as usize;
                let mut coef = [0.0; 4];
                for (i, c) in coef.iter_mut().enumerate() {
                    let mut l = 1.0;
                    for j in 0..4 {
                        if j != i {
                            l *= (t - times[k + j]) / (times[k + i] - times[k + j]);
                        }
                    }
                    *c = l;
                }
                for (idx, o) in out.iter_mut().enumerate() {
                    *o = (0..4).map(|i| coef[i] * values[k + i][idx]).sum();
                }
            }
            SourceMode::Direct { nodes, phi, alpha } => {
                let vals = nodes
                    .par_iter()
                    .map(|&x| manufactured_rhs(&self.sol, phi, *alpha, x, t))
                    .collect::<Result<Vec<_>>>()?;
                out.copy_from_slice(&vals);
            }
        }
        Ok(())
    }
}

type SourceFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Closure-backed source `f(x, t)` sampled at grid nodes.
pub struct FnSource {
    nodes: Vec<Vec<f64>>,
    f: SourceFn,
}

impl FnSource {
    pub fn new<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        let nodes = (0..grid.len()).map(|l| grid.node(l)).collect();
        FnSource { nodes, f: Arc::new(f) }
    }
}

impl Source for FnSource {
    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        for (o, x) in out.iter_mut().zip(&self.nodes) {
            *o = (self.f)(x, t);
        }
        Ok(())
    }
}
