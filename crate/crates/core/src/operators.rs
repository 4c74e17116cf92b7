//! Finite-difference quadrature stencils
//! `L^h[psi](x) = sum_{beta != 0} (psi(x + z_beta) - psi(x)) w_beta`,
//! their builders, admissibility checks, fast application on grids and
//! local truncation error studies.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grid::{make_grid, Grid, GridFunction};
use crate::levy_measure::{annulus_mass, cell_mass, cut_cell_mass, moment_matrix, norm, LevyMeasure, Symmetry};
use crate::quad::{gauss_legendre, integrate, Tol};

/// What to do with the measure beyond the stored stencil radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FarField {
    /// Neglect it.
    #[default]
    Drop,
    /// Keep it as `-tail * psi(x)`: exact for zero-extended functions when
    /// the stored radius covers the box.
    Absorb,
}

/// A symmetric, nonnegative stencil on `h Z^N`.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilOperator {
    dim: usize,
    h: f64,
    offsets: Vec<i64>,
    weights: Vec<f64>,
    absorbed_tail: f64,
    dropped_tail: f64,
}

impl StencilOperator {
    /// Builds a stencil from `(offset, weight)` pairs. Duplicate offsets are
    /// merged, the zero offset and zero weights are discarded, and entries
    /// are sorted lexicographically.
    pub fn new(dim: usize, h: f64, entries: Vec<(Vec<i64>, f64)>) -> Result<Self> {
        if dim == 0 || !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidOperator(format!("bad dimension {dim} or spacing {h}")));
        }
        let mut entries = entries;
        for (b, w) in &entries {
            if b.len() != dim {
                return Err(Error::InvalidOperator("offset dimension mismatch".into()));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("weight at offset {b:?}")));
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut offsets = Vec::with_capacity(entries.len() * dim);
        let mut weights: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<Vec<i64>> = None;
        for (b, w) in entries {
            if b.iter().all(|&v| v == 0) {
                continue;
            }
            if last.as_ref() == Some(&b) {
                *weights.last_mut().unwrap() += w;
                continue;
            }
            offsets.extend_from_slice(&b);
            weights.push(w);
            last = Some(b);
        }
        let mut op = StencilOperator { dim, h, offsets, weights, absorbed_tail: 0.0, dropped_tail: 0.0 };
        op.prune();
        Ok(op)
    }

    fn prune(&mut self) {
        let d = self.dim;
        let mut offsets = Vec::with_capacity(self.offsets.len());
        let mut weights = Vec::with_capacity(self.weights.len());
        for (i, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                offsets.extend_from_slice(&self.offsets[i * d..(i + 1) * d]);
                weights.push(w);
            }
        }
        self.offsets = offsets;
        self.weights = weights;
    }

    /// Attaches the measure beyond the stored radius.
    pub fn with_tail(mut self, tail: f64, far: FarField) -> Self {
        match far {
            FarField::Drop => self.dropped_tail += tail,
            FarField::Absorb => self.absorbed_tail += tail,
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn offset(&self, i: usize) -> &[i64] {
        &self.offsets[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[i64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.offset(i), self.weights[i]))
    }

    /// Weight at `beta`, zero if absent.
    pub fn weight_at(&self, beta: &[i64]) -> f64 {
        let d = self.dim;
        let (mut lo, mut hi) = (0usize, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.offsets[mid * d..(mid + 1) * d].cmp(beta) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return self.weights[mid],
            }
        }
        0.0
    }

    pub fn stored_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Total mass acting on `psi(x)`: stored weights plus absorbed tail.
    pub fn mass(&self) -> f64 {
        self.stored_mass() + self.absorbed_tail
    }

    pub fn absorbed_tail(&self) -> f64 {
        self.absorbed_tail
    }

    pub fn dropped_tail(&self) -> f64 {
        self.dropped_tail
    }

    /// Largest `|z_beta|` among stored offsets.
    pub fn radius(&self) -> f64 {
        (0..self.len())
            .map(|i| self.h * norm(&self.offset(i).iter().map(|&b| b as f64).collect::<Vec<_>>()))
            .fold(0.0, f64::max)
    }

    /// Multiplies all weights (and tails) by `c >= 0`.
    pub fn scaled(mut self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidOperator(format!("scale must be nonnegative, got {c}")));
        }
        for w in &mut self.weights {
            *w *= c;
        }
        self.absorbed_tail *= c;
        self.dropped_tail *= c;
        self.prune();
        Ok(self)
    }

    /// Text dump: one line `beta_1 ... beta_N w` per entry, in
    /// lexicographic order, weights with 17 significant digits.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (b, w) in self.entries() {
            for v in b {
                let _ = write!(s, "{v} ");
            }
            let _ = writeln!(s, "{w:.16e}");
        }
        s
    }

    /// Parses the output of [`StencilOperator::dump`].
    pub fn parse_dump(dim: usize, h: f64, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != dim + 1 {
                return Err(Error::Config { line: n + 1, msg: format!("expected {} fields", dim + 1) });
            }
            let beta = parts[..dim]
                .iter()
                .map(|p| p.parse::<i64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config { line: n + 1, msg: e.to_string() })?;
            let w = parts[dim].parse::<f64>().map_err(|e| Error::Config { line: n + 1, msg: e.to_string() })?;
            entries.push((beta, w));
        }
        StencilOperator::new(dim, h, entries)
    }
}

/// Sum of stencils on the same lattice.
pub fn sum(ops: &[StencilOperator]) -> Result<StencilOperator> {
    let first = ops.first().ok_or_else(|| Error::InvalidOperator("empty sum".into()))?;
    let mut entries = Vec::new();
    let (mut absorbed, mut dropped) = (0.0, 0.0);
    for op in ops {
        if op.dim != first.dim || (op.h - first.h).abs() > 1e-14 * first.h {
            return Err(Error::InvalidOperator("summands live on different lattices".into()));
        }
        entries.extend(op.entries().map(|(b, w)| (b.to_vec(), w)));
        absorbed += op.absorbed_tail;
        dropped += op.dropped_tail;
    }
    let mut s = StencilOperator::new(first.dim, first.h, entries)?;
    s.absorbed_tail = absorbed;
    s.dropped_tail = dropped;
    Ok(s)
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("h must be positive, got {h}")))
    }
}

/// Multilinear interpolation weights of the point `p` on `h Z^N`.
fn hat_weights(p: &[f64], h: f64) -> Vec<(Vec<i64>, f64)> {
    let d = p.len();
    let mut base = vec![0i64; d];
    let mut frac = vec![0.0; d];
    for a in 0..d {
        let q = p[a] / h;
        let f = q.floor();
        base[a] = f as i64;
        frac[a] = q - f;
    }
    let mut out = Vec::with_capacity(1 << d);
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut b = base.clone();
        for a in 0..d {
            if corner >> a & 1 == 1 {
                b[a] += 1;
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        if w > 0.0 {
            out.push((b, w));
        }
    }
    out
}

/// Semi-Lagrangian approximation of `sum_i (sigma_i . D)^2`:
/// `w_beta = eta^{-2} sum_{i, +-} p_beta(+- sigma_i eta)` with multilinear
/// interpolation `p_beta`.
pub fn build_local(sigmas: &[Vec<f64>], eta: f64, h: f64) -> Result<StencilOperator> {
    check_h(h)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    let dim = sigmas.first().map(|s| s.len()).ok_or_else(|| Error::InvalidParameter("no directions".into()))?;
    let mut entries = Vec::new();
    for s in sigmas {
        if s.len() != dim || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("direction vectors must share one finite dimension".into()));
        }
        for sign in [1.0, -1.0] {
            let p: Vec<f64> = s.iter().map(|v| sign * v * eta).collect();
            for (b, w) in hat_weights(&p, h) {
                entries.push((b, w / (eta * eta)));
            }
        }
    }
    StencilOperator::new(dim, h, entries)
}

/// Standard `2N + 1` point Laplacian, weight `1/h^2` at `+-e_i`.
pub fn build_discrete_laplacian(dim: usize, h: f64) -> Result<StencilOperator> {
    check_h(h)?;
    let mut entries = Vec::new();
    for a in 0..dim {
        for s in [-1, 1] {
            let mut b = vec![0i64; dim];
            b[a] = s;
            entries.push((b, 1.0 / (h * h)));
        }
    }
    StencilOperator::new(dim, h, entries)
}

/// Drops the singular part `|z| < r` altogether.
pub fn build_trivial_singular(dim: usize, h: f64) -> Result<StencilOperator> {
    check_h(h)?;
    StencilOperator::new(dim, h, Vec::new())
}

/// Square root of a symmetric positive semidefinite matrix, returned as
/// its columns.
fn sqrt_columns(z: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let eig = z.clone().symmetric_eigen();
    let d = z.nrows();
    let mut s = DMatrix::zeros(d, d);
    for i in 0..d {
        let l = eig.eigenvalues[i].max(0.0).sqrt();
        let v = eig.eigenvectors.column(i);
        s += v * v.transpose() * l;
    }
    (0..d).map(|i| s.column(i).iter().copied().collect()).collect()
}

/// Second-order approximation of the singular part through the local
/// operator `(1/2) tr(Z D^2)`, `Z = int_{|z|<r} z z^T dmu`, discretized by
/// [`build_local`] along the columns of `sqrt(Z)`.
pub fn build_vanishing_viscosity(mu: &LevyMeasure, r: f64, eta: f64, h: f64) -> Result<StencilOperator> {
    check_h(h)?;
    if !(r >= h) {
        return Err(Error::InvalidParameter(format!("need r >= h, got r = {r}, h = {h}")));
    }
    let z = moment_matrix(mu, r)?;
    let cols = sqrt_columns(&z);
    build_local(&cols, eta, h)?.scaled(0.5)
}

/// Coordinate form of the vanishing viscosity: weight
/// `(1/(2h^2)) int_{|z|<r} z_i^2 dmu` at `+-e_i`.
pub fn build_vanishing_viscosity_coordinate(mu: &LevyMeasure, r: f64, h: f64) -> Result<StencilOperator> {
    check_h(h)?;
    if mu.dim() > 1 && mu.symmetry() == Symmetry::Even {
        return Err(Error::InvalidMeasure(
            "coordinate viscosity needs a coordinate-symmetric or radial measure".into(),
        ));
    }
    let z = moment_matrix(mu, r)?;
    let dim = mu.dim();
    let mut entries = Vec::new();
    for a in 0..dim {
        for s in [-1, 1] {
            let mut b = vec![0i64; dim];
            b[a] = s;
            entries.push((b, z[(a, a)] / (2.0 * h * h)));
        }
    }
    StencilOperator::new(dim, h, entries)
}

/// All `beta != 0` with `lo <= |z_beta| <= hi`, visited in lexicographic order.
fn lattice_shell(dim: usize, h: f64, lo: f64, hi: f64) -> Vec<Vec<i64>> {
    let m = (hi / h + 1e-9).floor() as i64;
    let mut out = Vec::new();
    let mut b = vec![-m; dim];
    loop {
        let r = h * norm(&b.iter().map(|&v| v as f64).collect::<Vec<_>>());
        if b.iter().any(|&v| v != 0) && r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12) {
            out.push(b.clone());
        }
        let mut a = dim;
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            b[a] += 1;
            if b[a] <= m {
                break;
            }
            b[a] = -m;
        }
    }
}

/// Mirrors positive-side weights `w_j, j >= 1` into a 1D stencil.
fn symmetric_1d(h: f64, w: &[(i64, f64)]) -> Result<StencilOperator> {
    let mut entries = Vec::with_capacity(2 * w.len());
    for &(j, v) in w {
        entries.push((vec![j], v));
        entries.push((vec![-j], v));
    }
    StencilOperator::new(1, h, entries)
}

fn check_radii(r: f64, h: f64, r_max: f64) -> Result<()> {
    check_h(h)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("r must be finite and nonnegative, got {r}")));
    }
    if !(r_max >= h) {
        return Err(Error::InvalidParameter(format!("stencil radius {r_max} is below h = {h}")));
    }
    Ok(())
}

/// Midpoint rule: `w_beta = mu(z_beta + R_h)` for `r <= |z_beta| <= r_max`.
/// Cells are used whole, so with `r = h` in 1D the first neighbour gets
/// the full mass of `[h/2, 3h/2)`.
pub fn build_midpoint(mu: &LevyMeasure, r: f64, h: f64, r_max: f64, far: FarField) -> Result<StencilOperator> {
    check_radii(r, h, r_max)?;
    if mu.dim() == 1 {
        let m = (r_max / h + 1e-9).floor() as i64;
        let j0 = ((r / h) - 1e-9).ceil().max(1.0) as i64;
        let mut w = Vec::with_capacity((m - j0 + 1).max(0) as usize);
        for j in j0..=m {
            w.push((j, cell_mass(mu, &[j], h)?));
        }
        let tail = annulus_mass(mu, (m as f64 + 0.5) * h, f64::INFINITY)?;
        return Ok(symmetric_1d(h, &w)?.with_tail(tail, far));
    }
    let mut entries = Vec::new();
    for b in lattice_shell(mu.dim(), h, r.max(h * 0.5), r_max) {
        let w = cell_mass(mu, &b, h)?;
        entries.push((b, w));
    }
    let tail = annulus_mass(mu, r_max + 0.5 * h, f64::INFINITY)?;
    Ok(StencilOperator::new(mu.dim(), h, entries)?.with_tail(tail, far))
}

/// Interpolation quadrature `w_beta = int_{|z|>r} p_beta^k dmu` with
/// piecewise constant (`k = 0`), piecewise linear (`k = 1`) or
/// piecewise quadratic (`k = 2`, 1D only) interpolation of `psi`.
/// Quadratic weights are checked for sign.
pub fn build_interp_quadrature(
    mu: &LevyMeasure,
    k: usize,
    r: f64,
    h: f64,
    r_max: f64,
    far: FarField,
) -> Result<StencilOperator> {
    check_radii(r, h, r_max)?;
    if r <= 0.0 && mu.order().is_some_and(|a| a > 0.0) {
        return Err(Error::InvalidParameter("singular measure needs r > 0".into()));
    }
    let total = annulus_mass(mu, r, f64::INFINITY)?;
    let op = match (k, mu.dim()) {
        (0, 1) => {
            let m = (r_max / h + 1e-9).floor() as i64;
            let mut w = Vec::new();
            for j in 1..=m {
                let v = cut_cell_mass(mu, &[j], h, r)?;
                if v > 0.0 {
                    w.push((j, v));
                }
            }
            symmetric_1d(h, &w)?
        }
        (0, d) => {
            let mut entries = Vec::new();
            for b in lattice_shell(d, h, (r - h * (d as f64).sqrt()).max(0.0), r_max) {
                let v = cut_cell_mass(mu, &b, h, r)?;
                if v > 0.0 {
                    entries.push((b, v));
                }
            }
            StencilOperator::new(d, h, entries)?
        }
        (1, 1) | (2, 1) => {
            let panels = if k == 1 { Panels::odd(1, h) } else { Panels::even(2, h) };
            let rho = |z: f64| mu.density(&[z]);
            let a = panel_integrals(&panels, r, r_max, |lo, hi, basis| {
                integrate(|z| basis(z) * rho(z), lo, hi, Tol::new(1e-300, 1e-13))
            })?;
            let w = fold_symmetric(&a, true)?;
            symmetric_1d(h, &w)?
        }
        (1, d) => {
            let mut entries = Vec::new();
            for b in lattice_shell(d, h, (r - 2.0 * h * (d as f64).sqrt()).max(0.0), r_max) {
                let v = hat_mass_outside(mu, &b, h, r);
                if v > 0.0 {
                    entries.push((b, v));
                }
            }
            StencilOperator::new(d, h, entries)?
        }
        _ => return Err(Error::Unsupported(format!("interpolation order {k} in dimension {}", mu.dim()))),
    };
    check_nonnegative(&op)?;
    let stored = op.stored_mass();
    let tail = (total - stored).max(0.0);
    Ok(op.with_tail(tail, far))
}

fn check_nonnegative(op: &StencilOperator) -> Result<()> {
    let max = op.weights().iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if let Some((b, w)) = op.entries().find(|(_, w)| *w < -1e-14 * max) {
        return Err(Error::InvalidOperator(format!("negative weight {w:e} at offset {b:?}")));
    }
    Ok(())
}

/// `int_{|z|>r} prod_a hat(z_a/h - beta_a) dmu` over the 2^N cells of the
/// hat support.
fn hat_mass_outside(mu: &LevyMeasure, beta: &[i64], h: f64, r: f64) -> f64 {
    let d = beta.len();
    let hat =
        |z: &[f64]| -> f64 { z.iter().zip(beta).map(|(&x, &b)| (1.0 - (x / h - b as f64).abs()).max(0.0)).product() };
    let mut total = 0.0;
    for corner in 0..(1usize << d) {
        let mut lo = vec![0.0; d];
        let mut hi = vec![0.0; d];
        for a in 0..d {
            let c = beta[a] as f64 * h;
            if corner >> a & 1 == 0 {
                lo[a] = c - h;
                hi[a] = c;
            } else {
                lo[a] = c;
                hi[a] = c + h;
            }
        }
        if (0..d).all(|a| lo[a] <= 0.0 && hi[a] >= 0.0) {
            // support cell touching the origin: handled by shells
            total += singular_cell(mu, &lo, &hi, r, &hat);
            continue;
        }
        total +=
            crate::quad::integrate_box(|z| if norm(z) > r { hat(z) * mu.density(z) } else { 0.0 }, &lo, &hi, 1e-13, 6);
    }
    total
}

fn singular_cell(mu: &LevyMeasure, lo: &[f64], hi: &[f64], r: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    crate::quad::integrate_box(|z| if norm(z) > r { f(z) * mu.density(z) } else { 0.0 }, lo, hi, 1e-12, 8)
}

/// Panels of a composite Newton-Cotes or interpolation rule in 1D.
struct Panels {
    k: usize,
    h: f64,
    /// Offset (in units of h) of the panel boundaries: panel m is
    /// `[(m k + shift) h, ((m+1) k + shift) h]`.
    shift: f64,
}

impl Panels {
    fn odd(k: usize, h: f64) -> Self {
        Panels { k, h, shift: 0.0 }
    }

    fn even(k: usize, h: f64) -> Self {
        Panels { k, h, shift: -(k as f64) / 2.0 }
    }

    fn for_order(k: usize, h: f64) -> Self {
        if k % 2 == 1 {
            Panels::odd(k, h)
        } else {
            Panels::even(k, h)
        }
    }
}

/// Integrates the Lagrange basis of every node of every panel over the
/// part of the panel in `(r, r_end]`, where `r_end` is the last panel
/// boundary not exceeding `r_max`. Returns `(node, integral)` pairs for
/// nodes on either side of zero, plus `r_end`.
fn panel_integrals<I>(p: &Panels, r: f64, r_max: f64, mut integral: I) -> Result<(Vec<(i64, f64)>, f64)>
where
    I: FnMut(f64, f64, &dyn Fn(f64) -> f64) -> Result<f64>,
{
    let k = p.k as i64;
    let shift = p.shift;
    let first_m = (((r / p.h) - shift) / k as f64 - 1.0).floor() as i64;
    let mut out: Vec<(i64, f64)> = Vec::new();
    let mut m = first_m.max(-2);
    let mut r_end = r;
    loop {
        let a = (m * k) as f64 + shift;
        let b = a + k as f64;
        if b * p.h > r_max * (1.0 + 1e-12) {
            break;
        }
        m += 1;
        if b * p.h <= r {
            continue;
        }
        r_end = b * p.h;
        let lo = (a * p.h).max(r);
        let hi = b * p.h;
        let n0 = a.round() as i64;
        for i in 0..=k {
            let node = n0 + i;
            let basis = |z: f64| {
                let s = z / p.h;
                let mut v = 1.0;
                for q in 0..=k {
                    if q != i {
                        v *= (s - (n0 + q) as f64) / ((i - q) as f64);
                    }
                }
                v
            };
            let v = integral(lo, hi, &basis)?;
            out.push((node, v));
        }
    }
    if r_end <= r {
        return Err(Error::InvalidParameter(format!("no panel fits between r = {r} and r_max = {r_max}")));
    }
    Ok((out, r_end))
}

/// `w_j = a_j + a_{-j}` for `j >= 1` from one-sided integrals. The node at
/// zero multiplies `psi(x) - psi(x)` in interpolation rules and is
/// dropped; in Newton-Cotes rules it would meet `rho(0)` and must vanish.
fn fold_symmetric(a: &(Vec<(i64, f64)>, f64), zero_allowed: bool) -> Result<Vec<(i64, f64)>> {
    let mut map = std::collections::BTreeMap::new();
    for &(j, v) in &a.0 {
        if j == 0 {
            if !zero_allowed && v.abs() > 1e-15 {
                return Err(Error::InvalidParameter("the basis function at z = 0 meets |z| > r; increase r".into()));
            }
            continue;
        }
        *map.entry(j.abs()).or_insert(0.0) += v;
    }
    Ok(map.into_iter().collect())
}

/// Composite Newton-Cotes rule of order `k <= 6` applied to
/// `psi(x+z) rho(z)`: `w_beta = rho(z_beta) int_{|z|>r} p_beta^k(z) dz`.
/// Nodes with `|z_beta| = r` keep their panel share. 1D only.
pub fn build_newton_cotes(
    mu: &LevyMeasure,
    k: usize,
    r: f64,
    h: f64,
    r_max: f64,
    far: FarField,
) -> Result<StencilOperator> {
    check_radii(r, h, r_max)?;
    if k > 6 {
        return Err(Error::InvalidParameter(format!("Newton-Cotes order must be at most 6, got {k}")));
    }
    if mu.dim() != 1 {
        return Err(Error::Unsupported("Newton-Cotes stencils are implemented in 1D".into()));
    }
    if k == 0 {
        let m = (r_max / h + 1e-9).floor() as i64;
        let mut w = Vec::new();
        for j in 1..=m {
            let lo = ((j as f64 - 0.5) * h).max(r);
            let hi = (j as f64 + 0.5) * h;
            if hi > lo {
                w.push((j, mu.density(&[j as f64 * h]) * (hi - lo)));
            }
        }
        let tail = annulus_mass(mu, (m as f64 + 0.5) * h, f64::INFINITY)?;
        let op = symmetric_1d(h, &w)?;
        return Ok(op.with_tail(tail, far));
    }
    let panels = Panels::for_order(k, h);
    let (xg, wg) = gauss_legendre(4);
    let a = panel_integrals(&panels, r, r_max, |lo, hi, basis| {
        let c = 0.5 * (lo + hi);
        let hl = 0.5 * (hi - lo);
        Ok(xg.iter().zip(&wg).map(|(x, w)| w * hl * basis(c + hl * x)).sum())
    })?;
    let w: Vec<(i64, f64)> =
        fold_symmetric(&a, false)?.into_iter().map(|(j, v)| (j, v * mu.density(&[j as f64 * h]))).collect();
    let op = symmetric_1d(h, &w)?;
    check_nonnegative(&op)?;
    let tail = annulus_mass(mu, a.1, f64::INFINITY)?;
    Ok(op.with_tail(tail, far))
}

/// Weights of the powers of the discrete Laplacian,
/// `(-Delta_h)^{alpha/2}`: `K_j` for `j = 1..=m` and the one-sided tail
/// `sum_{j > m} K_j`.
pub fn pdl_weights(alpha: f64, h: f64, m: usize) -> Result<(Vec<f64>, f64)> {
    check_h(h)?;
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 2), got {alpha}")));
    }
    let a = 0.5 * alpha;
    // 2^alpha Gamma((1+alpha)/2) / (sqrt(pi) |Gamma(-a)|), |Gamma(-a)| = Gamma(1-a)/a
    let ln_c = alpha * 2f64.ln() + ln_gamma(0.5 * (1.0 + alpha)) - 0.5 * PI.ln() - (ln_gamma(1.0 - a) - a.ln());
    let scale = (ln_c - alpha * h.ln()).exp();
    let mut w = Vec::with_capacity(m);
    // Gamma(j - a) / Gamma(j + 1 + a), seeded at j = 1 and advanced by
    // the ratio (j - a) / (j + 1 + a); reseeded periodically.
    let ratio_at = |j: f64| (ln_gamma(j - a) - ln_gamma(j + 1.0 + a)).exp();
    let mut g = ratio_at(1.0);
    for j in 1..=m {
        if j > 1 {
            let jf = (j - 1) as f64;
            g *= (jf - a) / (jf + 1.0 + a);
            if j % 4096 == 0 {
                g = ratio_at(j as f64);
            }
        }
        w.push(scale * g);
    }
    let n = (m + 1) as f64;
    let g_next = if m == 0 { ratio_at(1.0) } else { g * ((m as f64) - a) / ((m as f64) + 1.0 + a) };
    // sum_{j >= n} Gamma(j-a)/Gamma(j+1+a) = Gamma(n-a)/(alpha Gamma(n+a))
    let tail = scale * g_next * (n + a) / alpha;
    Ok((w, tail))
}

/// Powers of the discrete Laplacian in 1D, truncated at `|j| <= m`.
pub fn build_pdl_1d(alpha: f64, h: f64, m: usize, far: FarField) -> Result<StencilOperator> {
    build_pdl_axis(1, 0, alpha, h, m, far)
}

/// Powers of the 1D discrete Laplacian acting along one axis of R^N.
pub fn build_pdl_axis(dim: usize, axis: usize, alpha: f64, h: f64, m: usize, far: FarField) -> Result<StencilOperator> {
    if axis >= dim {
        return Err(Error::InvalidParameter(format!("axis {axis} out of range for dimension {dim}")));
    }
    let (w, tail) = pdl_weights(alpha, h, m)?;
    let mut entries = Vec::with_capacity(2 * m);
    for (i, &v) in w.iter().enumerate() {
        for s in [-1i64, 1] {
            let mut b = vec![0i64; dim];
            b[axis] = s * (i as i64 + 1);
            entries.push((b, v));
        }
    }
    Ok(StencilOperator::new(dim, h, entries)?.with_tail(2.0 * tail, far))
}

/// Structural properties of a stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    pub symmetric: bool,
    pub max_asymmetry: f64,
    pub nonnegative: bool,
    pub min_weight: f64,
    pub total_mass: f64,
    /// `sum_beta (|z_beta|^2 ^ 1) w_beta`, bounded uniformly in h for
    /// admissible families.
    pub ul_statistic: f64,
    pub absorbed_tail: f64,
    pub dropped_tail: f64,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.symmetric && self.nonnegative && self.total_mass.is_finite()
    }
}

pub fn admissibility_check(op: &StencilOperator) -> AdmissibilityReport {
    let mut max_asym = 0.0f64;
    let mut min_w = f64::INFINITY;
    let mut ul = 0.0;
    for (b, w) in op.entries() {
        let neg: Vec<i64> = b.iter().map(|v| -v).collect();
        let wm = op.weight_at(&neg);
        max_asym = max_asym.max((w - wm).abs() / w.abs().max(wm.abs()));
        min_w = min_w.min(w);
        let z2: f64 = b.iter().map(|&v| (v as f64 * op.h()).powi(2)).sum();
        ul += z2.min(1.0) * w;
    }
    let absorbed = op.absorbed_tail();
    AdmissibilityReport {
        symmetric: max_asym <= 1e-12,
        max_asymmetry: max_asym,
        nonnegative: min_w >= 0.0 || op.is_empty(),
        min_weight: if op.is_empty() { 0.0 } else { min_w },
        total_mass: op.mass(),
        ul_statistic: ul + absorbed,
        absorbed_tail: absorbed,
        dropped_tail: op.dropped_tail(),
    }
}

/// Good FFT length: the smallest 2^a 3^b 5^c not below n.
fn fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

struct DirectEntry {
    offset: Vec<i64>,
    delta: isize,
    weight: f64,
}

struct LineGroup {
    axis: usize,
    len: usize,
    spectrum: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// A stencil prepared for repeated application on one grid.
///
/// Entries along a single axis are applied by FFT convolution of whole
/// grid lines when that is cheaper; the rest by direct summation in
/// entry order. Both paths are deterministic.
pub struct OperatorPlan {
    grid: Grid,
    mass: f64,
    direct: Vec<DirectEntry>,
    lines: Vec<LineGroup>,
    exit: Vec<f64>,
}

impl OperatorPlan {
    pub fn new(op: &StencilOperator, grid: &Grid) -> Result<Self> {
        Self::with_fft(op, grid, true)
    }

    /// Like [`OperatorPlan::new`], optionally forbidding the FFT path.
    pub fn with_fft(op: &StencilOperator, grid: &Grid, allow_fft: bool) -> Result<Self> {
        if op.dim() != grid.dim() {
            return Err(Error::GridMismatch(format!("operator dimension {} vs grid {}", op.dim(), grid.dim())));
        }
        if (op.h() - grid.h()).abs() > 1e-12 * grid.h() {
            return Err(Error::GridMismatch(format!("operator spacing {} vs grid {}", op.h(), grid.h())));
        }
        let d = grid.dim();
        let shape = grid.shape();
        let strides = grid.strides();
        let reach = |b: &[i64]| (0..d).all(|a| b[a].unsigned_abs() < shape[a] as u64);
        // axis-aligned entries per axis
        let mut axis_w: Vec<Vec<(i64, f64)>> = vec![Vec::new(); d];
        let mut general = Vec::new();
        for (b, w) in op.entries() {
            if !reach(b) {
                continue;
            }
            let nz: Vec<usize> = (0..d).filter(|&a| b[a] != 0).collect();
            if nz.len() == 1 {
                axis_w[nz[0]].push((b[nz[0]], w));
            } else {
                general.push((b.to_vec(), w));
            }
        }
        let mut lines = Vec::new();
        let mut planner = FftPlanner::new();
        let total = grid.len() as f64;
        for (axis, ws) in axis_w.into_iter().enumerate() {
            if ws.is_empty() {
                continue;
            }
            let n = shape[axis];
            let l = fft_size(2 * n - 1);
            let fft_cost = (total / n as f64 / 2.0).ceil() * 2.0 * 5.0 * l as f64 * (l as f64).log2() + 4.0 * total;
            let direct_cost = ws.len() as f64 * total;
            if allow_fft && direct_cost > fft_cost {
                let mut kernel = vec![Complex::new(0.0, 0.0); l];
                for &(j, w) in &ws {
                    let idx = if j >= 0 { j as usize } else { l - j.unsigned_abs() as usize };
                    kernel[idx].re += w;
                }
                let fwd = planner.plan_fft_forward(l);
                let inv = planner.plan_fft_inverse(l);
                fwd.process(&mut kernel);
                // symmetric real kernel: real spectrum
                let spectrum = kernel.iter().map(|c| c.re / l as f64).collect();
                lines.push(LineGroup { axis, len: l, spectrum, fwd, inv });
            } else {
                for (j, w) in ws {
                    let mut b = vec![0i64; d];
                    b[axis] = j;
                    general.push((b, w));
                }
            }
        }
        general.sort_by(|a, b| a.0.cmp(&b.0));
        let direct = general
            .into_iter()
            .map(|(offset, weight)| {
                let delta = (0..d).map(|a| offset[a] as isize * strides[a] as isize).sum();
                DirectEntry { offset, delta, weight }
            })
            .collect();
        let mut plan = OperatorPlan { grid: grid.clone(), mass: op.mass(), direct, lines, exit: Vec::new() };
        let ones = vec![1.0; grid.len()];
        let mut out = vec![0.0; grid.len()];
        plan.apply_into(&ones, &mut out);
        plan.exit = out.iter().map(|v| (-v).max(0.0)).collect();
        Ok(plan)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Mass of the offsets that leave the box from each node.
    pub fn exit_mass(&self) -> &[f64] {
        &self.exit
    }

    /// Diagonal entry of the operator matrix.
    pub fn diagonal(&self) -> f64 {
        -self.mass
    }

    /// `out = L^h[psi]` on the grid, `psi` extended by zero.
    pub fn apply_into(&self, psi: &[f64], out: &mut [f64]) {
        assert_eq!(psi.len(), self.grid.len());
        assert_eq!(out.len(), self.grid.len());
        for (o, p) in out.iter_mut().zip(psi) {
            *o = -self.mass * p;
        }
        for e in &self.direct {
            self.add_entry(e, psi, out);
        }
        for g in &self.lines {
            self.add_lines(g, psi, out);
        }
    }

    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; psi.len()];
        self.apply_into(psi, &mut out);
        out
    }

    fn add_entry(&self, e: &DirectEntry, psi: &[f64], out: &mut [f64]) {
        let shape = self.grid.shape();
        let strides = self.grid.strides();
        let d = shape.len();
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for a in 0..d {
            let b = e.offset[a];
            lo[a] = (-b).max(0) as usize;
            hi[a] = (shape[a] as i64 - b.max(0)).max(0) as usize;
            if lo[a] >= hi[a] {
                return;
            }
        }
        let run = hi[d - 1] - lo[d - 1];
        let mut k = lo.clone();
        loop {
            let base: usize = (0..d).map(|a| k[a] * strides[a]).sum();
            let src = (base as isize + e.delta) as usize;
            let w = e.weight;
            for (o, p) in out[base..base + run].iter_mut().zip(&psi[src..src + run]) {
                *o += w * p;
            }
            if d == 1 {
                return;
            }
            let mut a = d - 1;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                k[a] += 1;
                if k[a] < hi[a] {
                    break;
                }
                k[a] = lo[a];
            }
        }
    }

    fn add_lines(&self, g: &LineGroup, psi: &[f64], out: &mut [f64]) {
        let shape = self.grid.shape();
        let stride = self.grid.strides()[g.axis];
        let n = shape[g.axis];
        let starts: Vec<usize> = (0..self.grid.len()).filter(|&l| (l / stride) % n == 0).collect();
        let mut buf = vec![Complex::new(0.0, 0.0); g.len];
        let mut scratch =
            vec![Complex::new(0.0, 0.0); g.fwd.get_inplace_scratch_len().max(g.inv.get_inplace_scratch_len())];
        for pair in starts.chunks(2) {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for i in 0..n {
                buf[i].re = psi[pair[0] + i * stride];
                if pair.len() == 2 {
                    buf[i].im = psi[pair[1] + i * stride];
                }
            }
            g.fwd.process_with_scratch(&mut buf, &mut scratch);
            for (c, s) in buf.iter_mut().zip(&g.spectrum) {
                *c *= *s;
            }
            g.inv.process_with_scratch(&mut buf, &mut scratch);
            for i in 0..n {
                out[pair[0] + i * stride] += buf[i].re;
                if pair.len() == 2 {
                    out[pair[1] + i * stride] += buf[i].im;
                }
            }
        }
    }

    /// Dense matrix of the operator on the grid (small grids only).
    pub fn dense(&self, op: &StencilOperator) -> DMatrix<f64> {
        let n = self.grid.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = -self.mass;
            let bi = self.grid.index(i);
            for (b, w) in op.entries() {
                let t: Vec<i64> = bi.iter().zip(b).map(|(x, y)| x + y).collect();
                if let Some(j) = self.grid.linear(&t) {
                    m[(i, j)] += w;
                }
            }
        }
        m
    }
}

/// `L^h[psi]` of a grid function (zero extension outside its box).
pub fn apply(op: &StencilOperator, u: &GridFunction) -> Result<GridFunction> {
    let plan = OperatorPlan::new(op, u.grid())?;
    GridFunction::from_values(u.grid(), plan.apply(u.values()))
}

/// One row of an LTE study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LteRecord {
    pub h: f64,
    pub err_linf: f64,
    pub err_l1: f64,
}

/// Local truncation errors `|L[psi] - L^h[psi]|` on the nodes of
/// `[-window, window]^N` for each `h`. `psi` is sampled on
/// `[-support, support]^N` (it should be negligible outside) and
/// `exact(x)` is the continuous operator applied to `psi`.
pub fn lte_study<B, P, E>(
    build: B,
    psi: P,
    exact: E,
    dim: usize,
    window: f64,
    support: f64,
    hs: &[f64],
) -> Result<Vec<LteRecord>>
where
    B: Fn(f64) -> Result<StencilOperator>,
    P: Fn(&[f64]) -> f64,
    E: Fn(&[f64]) -> f64,
{
    let mut out = Vec::with_capacity(hs.len());
    let mut cache: HashMap<Vec<i64>, f64> = HashMap::new();
    for &h in hs {
        let s = (support / h).round() * h;
        let grid = make_grid(&vec![(-s, s); dim], h)?;
        let op = build(h)?;
        let u = GridFunction::point_sample(&grid, &psi);
        let lu = apply(&op, &u)?;
        let mut linf = 0.0f64;
        let mut l1 = 0.0;
        grid.for_each_node(|l, x| {
            if x.iter().all(|v| v.abs() <= window + 1e-9 * h) {
                let key: Vec<i64> = x.iter().map(|v| (v * 1e9).round() as i64).collect();
                let ex = *cache.entry(key).or_insert_with(|| exact(x));
                let e = (lu.values()[l] - ex).abs();
                linf = linf.max(e);
                l1 += e;
            }
        });
        out.push(LteRecord { h, err_linf: linf, err_l1: l1 * grid.cell_volume() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_laplacian_is_exact_on_quadratics() {
        let op = build_discrete_laplacian(2, 0.25).unwrap();
        let g = make_grid(&[(-1.0, 1.0), (-1.0, 1.0)], 0.25).unwrap();
        let u = GridFunction::point_sample(&g, |x| x[0] * x[0] + 3.0 * x[1] * x[1]);
        let lu = apply(&op, &u).unwrap();
        let l = g.linear(&[0, 1]).unwrap();
        assert!((lu.values()[l] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn local_operator_on_lattice_directions_is_exact() {
        // sigma = e_1, eta = h: weights 1/h^2 at +-e_1
        let op = build_local(&[vec![1.0, 0.0]], 0.5, 0.5).unwrap();
        assert_eq!(op.len(), 2);
        assert!((op.weight_at(&[1, 0]) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn local_operator_mass_bound() {
        let h = 0.01;
        let eta = 0.1;
        let op = build_local(&[vec![0.5, 0.47]], eta, h).unwrap();
        assert!(op.mass() <= 2.0 / (eta * eta) * (1.0 + 1e-12));
        assert!(admissibility_check(&op).admissible());
    }

    #[test]
    fn pdl_alpha_one_closed_form() {
        let h = 0.3;
        let (w, tail) = pdl_weights(1.0, h, 200).unwrap();
        for (i, &v) in w.iter().enumerate() {
            let j = (i + 1) as f64;
            let exact = 1.0 / (PI * (j * j - 0.25)) / h;
            assert!((v - exact).abs() < 1e-13 * exact, "j={j}");
        }
        // one-sided tail: (1/(pi h)) / (200.5)
        let exact_tail = 1.0 / (PI * h * 200.5);
        assert!((tail - exact_tail).abs() < 1e-12 * exact_tail);
    }

    #[test]
    fn pdl_recurrence_stays_accurate() {
        let (w, _) = pdl_weights(0.7, 0.1, 20000).unwrap();
        let a = 0.35;
        let direct = |j: f64| (ln_gamma(j - a) - ln_gamma(j + 1.0 + a)).exp();
        let ratio = w[19999] / w[0];
        let exact = direct(20000.0) / direct(1.0);
        assert!((ratio / exact - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dump_round_trip() {
        let mu = LevyMeasure::fractional_laplacian(1, 1.5).unwrap();
        let op = build_midpoint(&mu, 0.5, 0.5, 5.0, FarField::Drop).unwrap();
        let back = StencilOperator::parse_dump(1, 0.5, &op.dump()).unwrap();
        for (a, b) in op.weights().iter().zip(back.weights()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fft_and_direct_paths_agree() {
        let mu = LevyMeasure::fractional_laplacian(1, 0.8).unwrap();
        let g = make_grid(&[(-20.0, 20.0)], 0.05).unwrap();
        let op = build_midpoint(&mu, 0.05, 0.05, 40.0, FarField::Absorb).unwrap();
        let fast = OperatorPlan::with_fft(&op, &g, true).unwrap();
        let slow = OperatorPlan::with_fft(&op, &g, false).unwrap();
        assert!(!fast.lines.is_empty());
        let psi: Vec<f64> = g.axis_coords(0).iter().map(|x| (-x * x).exp() * (1.0 + x.sin())).collect();
        let a = fast.apply(&psi);
        let b = slow.apply(&psi);
        let scale = op.mass();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn newton_cotes_simpson_weights() {
        // constant density: weights are the composite Simpson weights from r = h
        let mu = LevyMeasure::radial(1, |s| (-s * s).exp(), None).unwrap();
        let h = 0.5;
        let op = build_newton_cotes(&mu, 2, h, h, 5.5, FarField::Drop).unwrap();
        let rho = |j: f64| (-(j * h).powi(2)).exp();
        assert!((op.weight_at(&[1]) - h / 3.0 * rho(1.0)).abs() < 1e-15);
        assert!((op.weight_at(&[2]) - 4.0 * h / 3.0 * rho(2.0)).abs() < 1e-15);
        assert!((op.weight_at(&[3]) - 2.0 * h / 3.0 * rho(3.0)).abs() < 1e-15);
        assert!((op.weight_at(&[-3]) - op.weight_at(&[3])).abs() < 1e-15);
    }

    #[test]
    fn newton_cotes_zero_node_rejected() {
        let mu = LevyMeasure::fractional_laplacian(1, 1.0).unwrap();
        assert!(build_newton_cotes(&mu, 2, 0.5, 1.0, 10.0, FarField::Drop).is_err());
    }

    #[test]
    fn interp_linear_weights_partition_mass() {
        let mu = LevyMeasure::fractional_laplacian(1, 1.2).unwrap();
        let h = 0.25;
        let op = build_interp_quadrature(&mu, 1, h, h, 20.0, FarField::Drop).unwrap();
        // the hats of the panels in (h, 20] sum to one there
        let inner = annulus_mass(&mu, h, 20.0).unwrap();
        assert!((op.stored_mass() - inner).abs() < 1e-11 * inner);
    }
}
