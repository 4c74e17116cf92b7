//! Symmetric Lévy measures given by densities, with cell masses, annulus
//! masses and truncated second-moment matrices.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_from_zero, integrate_to_infinity, Tol};

type Density = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const TOL: Tol = Tol::new(1e-300, 1e-13);

/// Symmetry class of a measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetry {
    /// rho(z) = rho(-z).
    Even,
    /// Invariant under sign flips of each coordinate.
    Coordinate,
    /// Depends on |z| only.
    Radial,
}

/// A symmetric Lévy measure `dmu = rho(z) dz` on R^N \ {0}.
#[derive(Clone)]
pub struct LevyMeasure {
    dim: usize,
    density: Density,
    profile: Option<Profile>,
    symmetry: Symmetry,
    order: Option<f64>,
    fractional: Option<f64>,
}

impl fmt::Debug for LevyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyMeasure")
            .field("dim", &self.dim)
            .field("symmetry", &self.symmetry)
            .field("order", &self.order)
            .field("fractional", &self.fractional)
            .finish()
    }
}

/// Normalising constant `c_{N,alpha}` of the fractional Laplacian.
pub fn fractional_laplacian_constant(dim: usize, alpha: f64) -> f64 {
    let a = 0.5 * alpha;
    // |Gamma(-a)| = Gamma(1 - a) / a for a in (0, 1)
    let ln_abs_gamma_neg = ln_gamma(1.0 - a) - a.ln();
    let n = dim as f64;
    (alpha * 2f64.ln() + ln_gamma(0.5 * (n + alpha)) - 0.5 * n * PI.ln() - ln_abs_gamma_neg).exp()
}

fn sphere_area(dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * PI.powf(0.5 * n) / ln_gamma(0.5 * n).exp()
}

impl LevyMeasure {
    /// `rho(z) = c_{N,alpha} |z|^{-N-alpha}`.
    pub fn fractional_laplacian(dim: usize, alpha: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidMeasure(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        let c = fractional_laplacian_constant(dim, alpha);
        let p = -(dim as f64) - alpha;
        let profile: Profile = Arc::new(move |s: f64| c * s.abs().powf(p));
        let pr = profile.clone();
        Ok(LevyMeasure {
            dim,
            density: Arc::new(move |z: &[f64]| pr(norm(z))),
            profile: Some(profile),
            symmetry: Symmetry::Radial,
            order: Some(alpha),
            fractional: Some(alpha),
        })
    }

    /// Radially symmetric measure with profile `rho(|z|)`.
    pub fn radial<F>(dim: usize, profile: F, order: Option<f64>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let profile: Profile = Arc::new(profile);
        let pr = profile.clone();
        let mu = LevyMeasure {
            dim,
            density: Arc::new(move |z: &[f64]| pr(norm(z))),
            profile: Some(profile),
            symmetry: Symmetry::Radial,
            order,
            fractional: None,
        };
        mu.validate()?;
        Ok(mu)
    }

    /// General density; symmetry is checked on sample points and the Lévy
    /// integrability condition is checked numerically.
    pub fn from_density<F>(dim: usize, density: F, symmetry: Symmetry, order: Option<f64>) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if dim > 2 && symmetry != Symmetry::Radial {
            return Err(Error::Unsupported("non-radial densities are supported for N <= 2".into()));
        }
        let mu = LevyMeasure { dim, density: Arc::new(density), profile: None, symmetry, order, fractional: None };
        mu.validate()?;
        Ok(mu)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        let samples = [0.37, 1.3, 2.9, 0.011];
        for (i, &s) in samples.iter().enumerate() {
            let mut z = vec![0.0; self.dim];
            for (a, za) in z.iter_mut().enumerate() {
                *za = s * (1.0 + 0.3 * (a + i) as f64).cos();
            }
            let v = self.density(&z);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidMeasure(format!("density must be finite and nonnegative, got {v}")));
            }
            let zm: Vec<f64> = z.iter().map(|x| -x).collect();
            if (self.density(&zm) - v).abs() > 1e-12 * v.abs().max(1e-300) {
                return Err(Error::InvalidMeasure("density is not even".into()));
            }
            if self.symmetry == Symmetry::Coordinate && self.dim > 1 {
                let mut zf = z.clone();
                zf[0] = -zf[0];
                if (self.density(&zf) - v).abs() > 1e-12 * v.abs().max(1e-300) {
                    return Err(Error::InvalidMeasure("density is not coordinate-symmetric".into()));
                }
            }
        }
        let m = moment_matrix(self, 1.0)?;
        let tail = annulus_mass(self, 1.0, f64::INFINITY)?;
        if !(m.trace().is_finite() && tail.is_finite()) {
            return Err(Error::InvalidMeasure("Lévy integrability fails".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        (self.density)(z)
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    /// Singularity order alpha with `rho ~ |z|^{-N-alpha}` near zero, if known.
    pub fn order(&self) -> Option<f64> {
        self.order
    }

    /// `Some(alpha)` for the fractional Laplacian measure.
    pub fn fractional_alpha(&self) -> Option<f64> {
        self.fractional
    }

    fn profile(&self) -> Option<&Profile> {
        self.profile.as_ref()
    }

    /// Density along a ray: `rho(s u)` for a unit vector `u` (1D: u = +-1).
    fn on_ray(&self, s: f64, u: &[f64]) -> f64 {
        match self.profile() {
            Some(p) => p(s),
            None => {
                let z: Vec<f64> = u.iter().map(|c| c * s).collect();
                self.density(&z)
            }
        }
    }
}

pub(crate) fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Integrates `g(s) * [rho(s u) + rho(-s u)]`-type radial integrals over
/// `(r_in, r_out)`, handling `r_in = 0` and `r_out = inf` by shells.
fn radial_integral<G: Fn(f64) -> f64>(g: G, r_in: f64, r_out: f64) -> Result<f64> {
    if r_out <= r_in {
        return Ok(0.0);
    }
    let mid = if r_in > 0.0 {
        if r_out.is_finite() {
            return integrate(&g, r_in, r_out, TOL);
        }
        r_in
    } else if r_out.is_finite() {
        return integrate_from_zero(&g, r_out, TOL);
    } else {
        1.0
    };
    let inner = if r_in < mid { integrate_from_zero(&g, mid, TOL)? } else { 0.0 };
    Ok(inner + integrate_to_infinity(&g, mid, TOL)?)
}

/// `mu({r_in < |z| < r_out})`; `r_out` may be infinite.
pub fn annulus_mass(mu: &LevyMeasure, r_in: f64, r_out: f64) -> Result<f64> {
    if r_in < 0.0 || r_out < r_in {
        return Err(Error::InvalidParameter(format!("bad annulus ({r_in}, {r_out})")));
    }
    if r_in == 0.0 && mu.order().is_some_and(|a| a > 0.0) {
        return Ok(f64::INFINITY);
    }
    if let Some(alpha) = mu.fractional_alpha() {
        if mu.dim() == 1 || mu.profile().is_some() {
            let c = fractional_laplacian_constant(mu.dim(), alpha);
            let area = if mu.dim() == 1 { 2.0 } else { sphere_area(mu.dim()) };
            let tail = |r: f64| if r.is_infinite() { 0.0 } else { r.powf(-alpha) / alpha };
            return Ok(area * c * (tail(r_in) - tail(r_out)));
        }
    }
    match mu.dim() {
        1 => radial_integral(|s| mu.density(&[s]) + mu.density(&[-s]), r_in, r_out),
        d if mu.profile().is_some() => {
            let p = mu.profile().unwrap().clone();
            let area = sphere_area(d);
            Ok(area * radial_integral(|s| p(s) * s.powi(d as i32 - 1), r_in, r_out)?)
        }
        2 => integrate(
            |th: f64| {
                let u = [th.cos(), th.sin()];
                radial_integral(|s| mu.on_ray(s, &u) * s, r_in, r_out).unwrap_or(f64::NAN)
            },
            0.0,
            2.0 * PI,
            Tol::new(1e-300, 1e-11),
        ),
        _ => Err(Error::Unsupported("annulus mass of a non-radial density in N > 2".into())),
    }
}

/// `Z = int_{|z| < r} z z^T dmu(z)`.
pub fn moment_matrix(mu: &LevyMeasure, r: f64) -> Result<DMatrix<f64>> {
    let d = mu.dim();
    if r <= 0.0 {
        return Ok(DMatrix::zeros(d, d));
    }
    if let Some(alpha) = mu.fractional_alpha() {
        // radial: (|S^{N-1}| / N) c int_0^r s^{1-alpha} ds I
        let c = fractional_laplacian_constant(d, alpha);
        let area = if d == 1 { 2.0 } else { sphere_area(d) };
        let v = area / d as f64 * c * r.powf(2.0 - alpha) / (2.0 - alpha);
        return Ok(DMatrix::identity(d, d) * v);
    }
    match d {
        1 => {
            let v = radial_integral(|s| s * s * (mu.density(&[s]) + mu.density(&[-s])), 0.0, r)?;
            Ok(DMatrix::from_element(1, 1, v))
        }
        _ if mu.profile().is_some() => {
            let p = mu.profile().unwrap().clone();
            let v = sphere_area(d) / d as f64 * radial_integral(|s| p(s) * s.powi(d as i32 + 1), 0.0, r)?;
            Ok(DMatrix::identity(d, d) * v)
        }
        2 => {
            let mut m = DMatrix::zeros(2, 2);
            let mut scale = 0.0;
            for (i, j) in [(0, 0), (1, 1), (0, 1)] {
                let v = integrate(
                    |th: f64| {
                        let u = [th.cos(), th.sin()];
                        u[i] * u[j] * radial_integral(|s| mu.on_ray(s, &u) * s.powi(3), 0.0, r).unwrap_or(f64::NAN)
                    },
                    0.0,
                    2.0 * PI,
                    Tol::new(1e-13 * scale, 1e-11),
                )?;
                scale += v.abs();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            Ok(m)
        }
        _ => Err(Error::Unsupported("moment matrix of a non-radial density in N > 2".into())),
    }
}

/// `mu(z_beta + R_h)` for `beta != 0`, with `R_h = [-h/2, h/2)^N`.
pub fn cell_mass(mu: &LevyMeasure, beta: &[i64], h: f64) -> Result<f64> {
    cut_cell_mass(mu, beta, h, 0.0)
}

/// `mu((z_beta + R_h) \ {|z| <= r})` for `beta != 0`.
pub fn cut_cell_mass(mu: &LevyMeasure, beta: &[i64], h: f64, r: f64) -> Result<f64> {
    if beta.len() != mu.dim() {
        return Err(Error::InvalidParameter("offset dimension mismatch".into()));
    }
    if beta.iter().all(|&b| b == 0) {
        return Err(Error::InvalidParameter("the cell at the origin has infinite mass".into()));
    }
    let lo: Vec<f64> = beta.iter().map(|&b| (b as f64 - 0.5) * h).collect();
    let hi: Vec<f64> = beta.iter().map(|&b| (b as f64 + 0.5) * h).collect();
    integrate_density_outside(mu, &lo, &hi, r)
}

/// `int_{box \ {|z| <= r}} rho`, for boxes not containing the origin.
pub(crate) fn integrate_density_outside(mu: &LevyMeasure, lo: &[f64], hi: &[f64], r: f64) -> Result<f64> {
    if mu.dim() == 1 {
        let (a, b) = (lo[0], hi[0]);
        let mut total = 0.0;
        // pieces of [a, b] with |z| > r
        for (pa, pb) in [(a, b.min(-r)), (a.max(r), b)] {
            if pb > pa {
                total += integrate(|s| mu.density(&[s]), pa, pb, TOL)?;
            }
        }
        return Ok(total);
    }
    Ok(box_outside_ball(mu, lo, hi, r, 10))
}

fn box_outside_ball(mu: &LevyMeasure, lo: &[f64], hi: &[f64], r: f64, depth: usize) -> f64 {
    let d = lo.len();
    let mut near = 0.0;
    let mut far = 0.0;
    for a in 0..d {
        let nearest = if lo[a] > 0.0 {
            lo[a]
        } else if hi[a] < 0.0 {
            hi[a]
        } else {
            0.0
        };
        near += nearest * nearest;
        far += lo[a].abs().max(hi[a].abs()).powi(2);
    }
    let (near, far) = (near.sqrt(), far.sqrt());
    if far <= r {
        return 0.0;
    }
    let vol: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).product();
    let scale = vol * mu.density(&lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect::<Vec<_>>());
    if near >= r {
        return crate::quad::integrate_box(|z| mu.density(z), lo, hi, 1e-12 * scale.abs().max(1e-300), 8);
    }
    if depth == 0 {
        return crate::quad::integrate_box(|z| if norm(z) > r { mu.density(z) } else { 0.0 }, lo, hi, f64::INFINITY, 0);
    }
    let mut sum = 0.0;
    for s in 0..(1usize << d) {
        let mut l = vec![0.0; d];
        let mut h = vec![0.0; d];
        for a in 0..d {
            let m = 0.5 * (lo[a] + hi[a]);
            if s >> a & 1 == 0 {
                l[a] = lo[a];
                h[a] = m;
            } else {
                l[a] = m;
                h[a] = hi[a];
            }
        }
        sum += box_outside_ball(mu, &l, &h, r, depth - 1);
    }
    sum
}
