//! Uniform spatial grids on truncated boxes, time grids, grid functions,
//! cell averages and discrete norms.

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;

/// Uniform lattice `h Z^N` restricted to a box. Node `beta` sits at
/// `h * beta`; the box holds `lo[a] <= beta[a] < lo[a] + shape[a]`.
/// Linear indices are row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    h: f64,
    lo: Vec<i64>,
    shape: Vec<usize>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(h: f64, lo: Vec<i64>, shape: Vec<usize>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        if lo.len() != shape.len() || lo.is_empty() {
            return Err(Error::InvalidGrid("dimension mismatch".into()));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidGrid("empty axis".into()));
        }
        let mut strides = vec![1usize; shape.len()];
        for a in (0..shape.len() - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        Ok(Grid { h, lo, shape, strides })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell volume `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    /// Physical box `[lo_a h, hi_a h]` per axis.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lo
            .iter()
            .zip(&self.shape)
            .map(|(&l, &n)| (l as f64 * self.h, (l + n as i64 - 1) as f64 * self.h))
            .collect()
    }

    /// Largest distance between two nodes of the box.
    pub fn diameter(&self) -> f64 {
        self.shape.iter().map(|&n| ((n - 1) as f64 * self.h).powi(2)).sum::<f64>().sqrt()
    }

    /// Lattice index of a linear index.
    pub fn index(&self, mut linear: usize) -> Vec<i64> {
        self.strides
            .iter()
            .zip(&self.lo)
            .map(|(&s, &lo)| {
                let k = linear / s;
                linear %= s;
                lo + k as i64
            })
            .collect()
    }

    /// Linear index of a lattice index, `None` outside the box.
    pub fn linear(&self, beta: &[i64]) -> Option<usize> {
        let mut l = 0usize;
        for (a, &b) in beta.iter().enumerate().take(self.dim()) {
            let k = b - self.lo[a];
            if k < 0 || k >= self.shape[a] as i64 {
                return None;
            }
            l += k as usize * self.strides[a];
        }
        Some(l)
    }

    /// Coordinates of the node with the given linear index.
    pub fn node(&self, linear: usize) -> Vec<f64> {
        self.index(linear).into_iter().map(|b| b as f64 * self.h).collect()
    }

    /// Coordinates of the nodes along one axis.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.shape[axis]).map(|k| (self.lo[axis] + k as i64) as f64 * self.h).collect()
    }

    /// Calls `f(linear, x)` for every node in linear order.
    pub fn for_each_node<F: FnMut(usize, &[f64])>(&self, mut f: F) {
        let d = self.dim();
        let mut k = vec![0usize; d];
        let mut x: Vec<f64> = self.lo.iter().map(|&l| l as f64 * self.h).collect();
        for l in 0..self.len() {
            f(l, &x);
            let mut a = d;
            while a > 0 {
                a -= 1;
                k[a] += 1;
                if k[a] < self.shape[a] {
                    x[a] = (self.lo[a] + k[a] as i64) as f64 * self.h;
                    break;
                }
                k[a] = 0;
                x[a] = self.lo[a] as f64 * self.h;
            }
        }
    }

    pub fn same_as(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "h {} vs {}, shape {:?} vs {:?}",
                self.h, other.h, self.shape, other.shape
            )))
        }
    }
}

/// Builds the grid of all nodes of `h Z^N` inside the box.
/// Box corners must lie on the lattice.
pub fn make_grid(bounds: &[(f64, f64)], h: f64) -> Result<Grid> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
    }
    if bounds.is_empty() {
        return Err(Error::InvalidGrid("box has no axes".into()));
    }
    let mut lo = Vec::with_capacity(bounds.len());
    let mut shape = Vec::with_capacity(bounds.len());
    for &(a, b) in bounds {
        if !(a.is_finite() && b.is_finite()) || b < a {
            return Err(Error::InvalidGrid(format!("bad interval [{a}, {b}]")));
        }
        let ia = aligned(a, h)?;
        let ib = aligned(b, h)?;
        lo.push(ia);
        shape.push((ib - ia + 1) as usize);
    }
    Grid::new(h, lo, shape)
}

fn aligned(a: f64, h: f64) -> Result<i64> {
    let q = a / h;
    let r = q.round();
    if (q - r).abs() > 1e-9 * r.abs().max(1.0) {
        return Err(Error::InvalidGrid(format!("box corner {a} is not a multiple of h = {h}")));
    }
    Ok(r as i64)
}

/// Values on the nodes of a grid, extended by zero outside the box.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &Grid) -> Self {
        GridFunction { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        Ok(GridFunction { grid: grid.clone(), values })
    }

    /// Point samples `f(x_beta)`.
    pub fn point_sample<F: Fn(&[f64]) -> f64>(grid: &Grid, f: F) -> Self {
        let mut values = vec![0.0; grid.len()];
        grid.for_each_node(|l, x| values[l] = f(x));
        GridFunction { grid: grid.clone(), values }
    }

    /// Cell averages `h^{-N} int_{x_beta + R_h} f` by a tensor 3-point
    /// Gauss rule per cell.
    pub fn cell_average<F: Fn(&[f64]) -> f64>(grid: &Grid, f: F) -> Self {
        let (gx, gw) = gauss_legendre(3);
        let d = grid.dim();
        let h = grid.h();
        let npts = 3usize.pow(d as u32);
        let mut values = vec![0.0; grid.len()];
        let mut p = vec![0.0; d];
        grid.for_each_node(|l, x| {
            let mut s = 0.0;
            for q in 0..npts {
                let mut w = 1.0;
                let mut r = q;
                for a in 0..d {
                    let k = r % 3;
                    r /= 3;
                    p[a] = x[a] + 0.5 * h * gx[k];
                    w *= 0.5 * gw[k];
                }
                s += w * f(&p);
            }
            values[l] = s;
        });
        GridFunction { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at lattice index `beta`, zero outside the box.
    pub fn value_at(&self, beta: &[i64]) -> f64 {
        self.grid.linear(beta).map_or(0.0, |l| self.values[l])
    }

    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_l1(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn norm_l2(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Discrete integral `h^N sum U_beta`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// Pointwise difference `self - other`.
    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.grid.same_as(&other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(GridFunction { grid: self.grid.clone(), values })
    }

    /// Restriction to the nodes of a coarser grid `coarse` whose nodes are
    /// all nodes of `self`.
    pub fn restrict_to(&self, coarse: &Grid) -> Result<GridFunction> {
        let ratio = coarse.h() / self.grid.h();
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 || k < 1.0 {
            return Err(Error::GridMismatch(format!("spacing ratio {ratio} is not an integer")));
        }
        let k = k as i64;
        let mut values = vec![0.0; coarse.len()];
        for (l, v) in values.iter_mut().enumerate() {
            let beta: Vec<i64> = coarse.index(l).into_iter().map(|b| b * k).collect();
            *v = self
                .grid
                .linear(&beta)
                .map(|i| self.values[i])
                .ok_or_else(|| Error::GridMismatch("coarse node outside fine box".into()))?;
        }
        Ok(GridFunction { grid: coarse.clone(), values })
    }
}

/// Time levels `0 = t_0 < t_1 < ... < t_J = T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("time levels must start at 0 and increase".into()));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("time grid is never empty")
    }

    pub fn dt(&self, j: usize) -> f64 {
        self.times[j] - self.times[j - 1]
    }

    pub fn max_dt(&self) -> f64 {
        (1..self.times.len()).map(|j| self.dt(j)).fold(0.0, f64::max)
    }
}

/// `J = ceil(T / dt_target)` equal steps of size `T / J`.
pub fn uniform_time_grid(t_final: f64, dt_target: f64) -> Result<TimeGrid> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidParameter(format!("final time must be positive, got {t_final}")));
    }
    if !(dt_target > 0.0 && dt_target.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt_target}")));
    }
    let ratio = t_final / dt_target;
    let steps = (ratio * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = t_final / steps as f64;
    let mut times: Vec<f64> = (0..=steps).map(|j| j as f64 * dt).collect();
    times[steps] = t_final;
    Ok(TimeGrid { times })
}
