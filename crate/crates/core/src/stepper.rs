//! The theta-method and its split generalization
//! `U^j = U^{j-1} + dt_j (sum_k L_k[phi_k(U^*)] + F^j)`, where each term is
//! evaluated at the new (implicit) or old (explicit) level.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, TimeGrid};
use crate::nonlinearity::Nonlinearity;
use crate::operators::{OperatorPlan, StencilOperator};

/// Time-dependent forcing sampled on the grid nodes.
pub trait Source: Send + Sync {
    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timing {
    Implicit,
    Explicit,
}

/// One `scale * L[phi(U)]` contribution.
#[derive(Clone, Debug)]
pub struct Term {
    pub op: Arc<StencilOperator>,
    pub phi: Nonlinearity,
    pub timing: Timing,
    pub scale: f64,
}

impl Term {
    pub fn new(op: Arc<StencilOperator>, phi: Nonlinearity, timing: Timing) -> Self {
        Term { op, phi, timing, scale: 1.0 }
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

struct PreparedTerm {
    term: Term,
    plan: Arc<OperatorPlan>,
}

/// Operators, nonlinearities and timing of a scheme on a fixed grid.
pub struct SchemeSpec {
    grid: Grid,
    terms: Vec<PreparedTerm>,
    source: Option<Arc<dyn Source>>,
    source_theta: f64,
    time: TimeGrid,
}

impl SchemeSpec {
    pub fn new(grid: &Grid, terms: Vec<Term>, time: TimeGrid) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter("scheme needs at least one term".into()));
        }
        let mut prepared: Vec<PreparedTerm> = Vec::new();
        for term in terms {
            if !(term.scale >= 0.0 && term.scale.is_finite()) {
                return Err(Error::InvalidParameter(format!("term scale must be nonnegative, got {}", term.scale)));
            }
            let plan = match prepared.iter().find(|p| Arc::ptr_eq(&p.term.op, &term.op)) {
                Some(p) => p.plan.clone(),
                None => Arc::new(OperatorPlan::new(&term.op, grid)?),
            };
            prepared.push(PreparedTerm { term, plan });
        }
        Ok(SchemeSpec { grid: grid.clone(), terms: prepared, source: None, source_theta: 1.0, time })
    }

    /// `theta L[phi(U^j)] + (1 - theta) L[phi(U^{j-1})]`.
    pub fn theta(grid: &Grid, op: StencilOperator, phi: Nonlinearity, theta: f64, time: TimeGrid) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!("theta must lie in [0, 1], got {theta}")));
        }
        let op = Arc::new(op);
        let mut terms = Vec::new();
        if theta > 0.0 {
            terms.push(Term::new(op.clone(), phi.clone(), Timing::Implicit).scaled(theta));
        }
        if theta < 1.0 {
            terms.push(Term::new(op, phi, Timing::Explicit).scaled(1.0 - theta));
        }
        Self::new(grid, terms, time)
    }

    /// Forcing `F^j = s g(t_j) + (1 - s) g(t_{j-1})` with `s = source_theta`.
    pub fn with_source(mut self, source: Arc<dyn Source>, source_theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&source_theta) {
            return Err(Error::InvalidParameter(format!("source theta must lie in [0, 1], got {source_theta}")));
        }
        self.source = Some(source);
        self.source_theta = source_theta;
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter().map(|p| &p.term)
    }

    pub fn has_implicit(&self) -> bool {
        self.terms.iter().any(|p| p.term.timing == Timing::Implicit)
    }

    /// Largest stable step with `|U| <= bound`; `None` when every term is
    /// implicit.
    pub fn cfl_max_dt(&self, bound: f64) -> Result<Option<f64>> {
        let mut s = 0.0;
        let mut any = false;
        for (k, p) in self.terms.iter().enumerate() {
            if p.term.timing != Timing::Explicit {
                continue;
            }
            any = true;
            let l = p.term.phi.lipschitz(bound);
            if !l.is_finite() {
                return Err(Error::UnboundedLipschitz { term: format!("#{k} ({})", p.term.phi) });
            }
            s += p.term.scale * l * p.plan.mass();
        }
        Ok(match (any, s > 0.0) {
            (true, true) => Some(1.0 / s),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Damping {
    /// Full Newton steps.
    None,
    /// Halve the step until the residual decreases, at most `max_halvings` times.
    Backtracking { max_halvings: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverPolicy {
    /// Scaled L-infinity residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub damping: Damping,
    /// Largest system solved with a dense LU factorization.
    pub dense_limit: usize,
    pub linear_tol: f64,
    pub max_linear_iter: usize,
    /// Nonlinear Jacobi sweeps after a stalled Newton step.
    pub jacobi_sweeps: usize,
    /// Skip CFL enforcement, and accept unbounded explicit Lipschitz constants.
    pub allow_cfl_violation: bool,
}

impl Default for SolverPolicy {
    fn default() -> Self {
        SolverPolicy {
            tol: 1e-10,
            max_iter: 50,
            damping: Damping::Backtracking { max_halvings: 20 },
            dense_limit: 1500,
            linear_tol: 1e-13,
            max_linear_iter: 2000,
            jacobi_sweeps: 20,
            allow_cfl_violation: false,
        }
    }
}

/// Per-step record passed to observers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub residual: f64,
    /// `dt h^N sum exit(x) phi(U)(x)`: mass sent outside the box this step.
    pub boundary_flux: f64,
    /// `dt h^N sum F^j`.
    pub source_mass: f64,
    pub cfl_bound: Option<f64>,
}

/// Totals over a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunDiagnostics {
    pub steps: usize,
    pub newton_iterations: usize,
    pub max_newton_iterations: usize,
    pub linear_iterations: usize,
    pub min_cfl_bound: Option<f64>,
    pub boundary_flux: f64,
    pub source_mass: f64,
}

impl RunDiagnostics {
    fn record(&mut self, d: &StepDiagnostics) {
        self.steps += 1;
        self.newton_iterations += d.newton_iterations;
        self.max_newton_iterations = self.max_newton_iterations.max(d.newton_iterations);
        self.linear_iterations += d.linear_iterations;
        self.boundary_flux += d.boundary_flux;
        self.source_mass += d.source_mass;
        if let Some(b) = d.cfl_bound {
            self.min_cfl_bound = Some(self.min_cfl_bound.map_or(b, |m: f64| m.min(b)));
        }
    }
}

pub trait Observer {
    fn observe(&mut self, j: usize, t: f64, u: &GridFunction, diag: &StepDiagnostics) -> Result<()>;
}

/// Tracks `h^N sum U^j` together with the accumulated source mass and
/// boundary flux.
#[derive(Clone, Debug, Default)]
pub struct MassTracker {
    pub initial: Option<f64>,
    pub mass: Vec<f64>,
    pub source: Vec<f64>,
    pub flux: Vec<f64>,
}

impl MassTracker {
    pub fn new(u0: &GridFunction) -> Self {
        MassTracker { initial: Some(u0.integral()), ..Default::default() }
    }

    /// `mass_j - (mass_0 + source_j - flux_j)` for every step.
    pub fn defects(&self) -> Vec<f64> {
        let m0 = self.initial.unwrap_or(0.0);
        (0..self.mass.len()).map(|j| self.mass[j] - (m0 + self.source[j] - self.flux[j])).collect()
    }
}

impl Observer for MassTracker {
    fn observe(&mut self, _j: usize, _t: f64, u: &GridFunction, diag: &StepDiagnostics) -> Result<()> {
        let s = self.source.last().copied().unwrap_or(0.0) + diag.source_mass;
        let f = self.flux.last().copied().unwrap_or(0.0) + diag.boundary_flux;
        self.mass.push(u.integral());
        self.source.push(s);
        self.flux.push(f);
        Ok(())
    }
}

/// Writes CSV snapshots at the first step reaching each requested time.
pub struct SnapshotWriter {
    dir: PathBuf,
    prefix: String,
    times: Vec<f64>,
    next: usize,
    pub written: Vec<PathBuf>,
}

impl SnapshotWriter {
    pub fn new(dir: impl Into<PathBuf>, prefix: &str, mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        SnapshotWriter { dir: dir.into(), prefix: prefix.to_string(), times, next: 0, written: Vec::new() }
    }
}

impl Observer for SnapshotWriter {
    fn observe(&mut self, j: usize, t: f64, u: &GridFunction, _diag: &StepDiagnostics) -> Result<()> {
        while self.next < self.times.len() && t >= self.times[self.next] - 1e-12 {
            let path = self.dir.join(format!("{}_{:04}.csv", self.prefix, self.next));
            write_snapshot(&path, u, t, j)?;
            self.written.push(path);
            self.next += 1;
        }
        Ok(())
    }
}

/// One row per node: coordinates then value. The header records `h` and `t`.
pub fn write_snapshot(path: &std::path::Path, u: &GridFunction, t: f64, j: usize) -> Result<()> {
    let grid = u.grid();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# h={:.17e} t={:.17e} step={}", grid.h(), t, j)?;
    let cols: Vec<String> = (1..=grid.dim()).map(|a| format!("x{a}")).collect();
    writeln!(w, "{},value", cols.join(","))?;
    let vals = u.values();
    let mut err = None;
    grid.for_each_node(|l, x| {
        if err.is_some() {
            return;
        }
        let mut line = String::new();
        for c in x {
            line.push_str(&format!("{c:.17e},"));
        }
        line.push_str(&format!("{:.17e}", vals[l]));
        if let Err(e) = writeln!(w, "{line}") {
            err = Some(e);
        }
    });
    if let Some(e) = err {
        return Err(e.into());
    }
    w.flush()?;
    Ok(())
}

/// How the implicit system is parametrized.
enum Unknown {
    /// Solve for `U` directly.
    State,
    /// Solve for `W = phi(U)` when every implicit term shares one
    /// invertible `phi` whose derivative blows up at 0.
    Potential(Nonlinearity),
}

/// Stateful driver with cached forcing values.
struct Driver<'a> {
    spec: &'a SchemeSpec,
    policy: &'a SolverPolicy,
    unknown: Unknown,
    dense: Vec<Option<DMatrix<f64>>>,
    g_prev: Option<(f64, Vec<f64>)>,
    envelope: f64,
}

impl<'a> Driver<'a> {
    fn new(spec: &'a SchemeSpec, policy: &'a SolverPolicy, u0: &GridFunction) -> Result<Self> {
        spec.grid.same_as(u0.grid())?;
        if !(policy.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("solver tolerance must be positive, got {}", policy.tol)));
        }
        let implicit: Vec<&PreparedTerm> = spec.terms.iter().filter(|p| p.term.timing == Timing::Implicit).collect();
        let unknown = match implicit.first() {
            Some(first) => {
                let phi = &first.term.phi;
                let shared = implicit.iter().all(|p| &p.term.phi == phi);
                match phi {
                    Nonlinearity::Power { m } if *m < 1.0 && shared => Unknown::Potential(phi.clone()),
                    _ => Unknown::State,
                }
            }
            None => Unknown::State,
        };
        let n = spec.grid.len();
        let dense = spec
            .terms
            .iter()
            .map(|p| (p.term.timing == Timing::Implicit && n <= policy.dense_limit).then(|| p.plan.dense(&p.term.op)))
            .collect();
        Ok(Driver { spec, policy, unknown, dense, g_prev: None, envelope: u0.norm_linf() })
    }

    fn forcing(&mut self, j: usize, out: &mut [f64]) -> Result<bool> {
        let Some(src) = &self.spec.source else {
            return Ok(false);
        };
        let times = self.spec.time.times();
        let (t0, t1) = (times[j - 1], times[j]);
        let n = out.len();
        let s = self.spec.source_theta;
        let mut g1 = vec![0.0; n];
        src.eval_into(t1, &mut g1)?;
        if s < 1.0 {
            let g0 = match self.g_prev.take() {
                Some((t, g)) if t == t0 => g,
                _ => {
                    let mut g = vec![0.0; n];
                    src.eval_into(t0, &mut g)?;
                    g
                }
            };
            for i in 0..n {
                out[i] = s * g1[i] + (1.0 - s) * g0[i];
            }
        } else {
            out.copy_from_slice(&g1);
        }
        self.g_prev = Some((t1, g1));
        Ok(true)
    }

    fn step(&mut self, u_prev: &GridFunction, j: usize) -> Result<(GridFunction, StepDiagnostics)> {
        let spec = self.spec;
        let grid = &spec.grid;
        let n = grid.len();
        let dt = spec.time.dt(j);
        let t = spec.time.times()[j];
        let vol = grid.cell_volume();
        let up = u_prev.values();

        let mut f = vec![0.0; n];
        let has_source = self.forcing(j, &mut f)?;
        let f_sup = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.envelope = self.envelope.max(u_prev.norm_linf()) + dt * f_sup;

        let mut diag = StepDiagnostics::default();
        if !self.policy.allow_cfl_violation {
            diag.cfl_bound = spec.cfl_max_dt(self.envelope)?;
            if let Some(b) = diag.cfl_bound {
                if dt > b * (1.0 + 1e-12) {
                    return Err(Error::CflViolation { dt, bound: b });
                }
            }
        } else {
            diag.cfl_bound = spec.cfl_max_dt(self.envelope).ok().flatten();
        }

        // right-hand side: U^{j-1} + dt (explicit terms + F)
        let mut rhs = up.to_vec();
        let mut tmp = vec![0.0; n];
        let mut flux = 0.0;
        for p in spec.terms.iter().filter(|p| p.term.timing == Timing::Explicit) {
            let phi_u: Vec<f64> = up.iter().map(|&v| p.term.phi.eval(v)).collect();
            p.plan.apply_into(&phi_u, &mut tmp);
            let c = dt * p.term.scale;
            for i in 0..n {
                rhs[i] += c * tmp[i];
            }
            flux += c * dot(p.plan.exit_mass(), &phi_u);
        }
        if has_source {
            for i in 0..n {
                rhs[i] += dt * f[i];
            }
            diag.source_mass = dt * vol * f.iter().sum::<f64>();
        }

        let u_new = if spec.has_implicit() {
            let u = self.solve(&rhs, up, dt, t, &mut diag)?;
            for p in spec.terms.iter().filter(|p| p.term.timing == Timing::Implicit) {
                let phi_u: Vec<f64> = u.iter().map(|&v| p.term.phi.eval(v)).collect();
                flux += dt * p.term.scale * dot(p.plan.exit_mass(), &phi_u);
            }
            u
        } else {
            rhs
        };
        diag.boundary_flux = flux * vol;
        if let Some(i) = u_new.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("U at node {i}, t = {t}")));
        }
        Ok((GridFunction::from_values(grid, u_new)?, diag))
    }

    /// Residual `G(x)`; also returns the current state `U(x)`.
    fn residual(&self, x: &[f64], rhs: &[f64], dt: f64, out: &mut [f64]) -> Vec<f64> {
        let n = x.len();
        let mut tmp = vec![0.0; n];
        let u: Vec<f64> = match &self.unknown {
            Unknown::State => x.to_vec(),
            Unknown::Potential(phi) => x.iter().map(|&w| phi.inverse(w).unwrap_or(f64::NAN)).collect(),
        };
        for i in 0..n {
            out[i] = u[i] - rhs[i];
        }
        for p in self.spec.terms.iter().filter(|p| p.term.timing == Timing::Implicit) {
            let arg: Vec<f64> = match &self.unknown {
                Unknown::State => u.iter().map(|&v| p.term.phi.eval(v)).collect(),
                Unknown::Potential(_) => x.to_vec(),
            };
            p.plan.apply_into(&arg, &mut tmp);
            let c = dt * p.term.scale;
            for i in 0..n {
                out[i] -= c * tmp[i];
            }
        }
        u
    }

    /// Diagonal scaling `e` and per-term column scalings `d_k` of the
    /// Jacobian `diag(e) - dt sum_k s_k A_k diag(d_k)`.
    fn jacobian_parts(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = x.len();
        match &self.unknown {
            Unknown::State => {
                let ds = self
                    .spec
                    .terms
                    .iter()
                    .filter(|p| p.term.timing == Timing::Implicit)
                    .map(|p| x.iter().map(|&v| p.term.phi.derivative(v).min(1e12)).collect())
                    .collect();
                (vec![1.0; n], ds)
            }
            Unknown::Potential(phi) => {
                let e = x.iter().map(|&w| phi.inverse_derivative(w).unwrap_or(1.0)).collect();
                let k = self.spec.terms.iter().filter(|p| p.term.timing == Timing::Implicit).count();
                (e, vec![vec![1.0; n]; k])
            }
        }
    }

    fn solve(&self, rhs: &[f64], up: &[f64], dt: f64, t: f64, diag: &mut StepDiagnostics) -> Result<Vec<f64>> {
        let n = rhs.len();
        let implicit: Vec<(usize, &PreparedTerm)> =
            self.spec.terms.iter().enumerate().filter(|(_, p)| p.term.timing == Timing::Implicit).collect();
        let mut x: Vec<f64> = match &self.unknown {
            Unknown::State => up.to_vec(),
            Unknown::Potential(phi) => up.iter().map(|&v| phi.eval(v)).collect(),
        };
        let scale = rhs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut g = vec![0.0; n];
        self.residual(&x, rhs, dt, &mut g);
        let mut res = linf(&g) / scale;
        let mut history = vec![res];
        let mut trial = vec![0.0; n];
        let mut g_trial = vec![0.0; n];
        for it in 0..self.policy.max_iter {
            if res <= self.policy.tol {
                diag.newton_iterations = it;
                diag.residual = res;
                return self.state_of(x);
            }
            let (e, ds) = self.jacobian_parts(&x);
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let delta = if n <= self.policy.dense_limit {
                let mut jm = DMatrix::from_diagonal(&DVector::from_vec(e.clone()));
                for ((k, p), d) in implicit.iter().zip(&ds) {
                    let a = self.dense[*k].as_ref().expect("dense operator cached");
                    let c = dt * p.term.scale;
                    for col in 0..n {
                        let s = c * d[col];
                        if s != 0.0 {
                            for row in 0..n {
                                jm[(row, col)] -= s * a[(row, col)];
                            }
                        }
                    }
                }
                jm.lu()
                    .solve(&DVector::from_vec(neg_g))
                    .ok_or_else(|| Error::SolverFailure { t, reason: "singular Jacobian".into() })?
                    .data
                    .into()
            } else {
                let matvec = |v: &[f64], out: &mut [f64]| {
                    let mut tmp = vec![0.0; n];
                    for i in 0..n {
                        out[i] = e[i] * v[i];
                    }
                    for ((_, p), d) in implicit.iter().zip(&ds) {
                        let dv: Vec<f64> = v.iter().zip(d).map(|(a, b)| a * b).collect();
                        p.plan.apply_into(&dv, &mut tmp);
                        let c = dt * p.term.scale;
                        for i in 0..n {
                            out[i] -= c * tmp[i];
                        }
                    }
                };
                let mut pre = e.clone();
                for ((_, p), d) in implicit.iter().zip(&ds) {
                    let c = dt * p.term.scale * p.plan.mass();
                    for i in 0..n {
                        pre[i] += c * d[i];
                    }
                }
                let (sol, iters) = bicgstab(matvec, &pre, &neg_g, self.policy.linear_tol, self.policy.max_linear_iter);
                diag.linear_iterations += iters;
                sol
            };

            // damped update
            let halvings = match self.policy.damping {
                Damping::None => 0,
                Damping::Backtracking { max_halvings } => max_halvings,
            };
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=halvings {
                for i in 0..n {
                    trial[i] = x[i] + lambda * delta[i];
                }
                self.residual(&trial, rhs, dt, &mut g_trial);
                let r = linf(&g_trial) / scale;
                if r.is_finite() && (halvings == 0 || r < (1.0 - 1e-4 * lambda) * res || r <= self.policy.tol) {
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if accepted {
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut g, &mut g_trial);
            } else {
                self.jacobi_sweeps(&mut x, rhs, dt);
                self.residual(&x, rhs, dt, &mut g);
            }
            res = linf(&g) / scale;
            history.push(res);
        }
        if res <= self.policy.tol {
            diag.newton_iterations = self.policy.max_iter;
            diag.residual = res;
            return self.state_of(x);
        }
        let tail: Vec<String> = history.iter().rev().take(8).rev().map(|r| format!("{r:.3e}")).collect();
        Err(Error::SolverFailure {
            t,
            reason: format!(
                "residual did not reach {:e} in {} iterations; last: {}",
                self.policy.tol,
                self.policy.max_iter,
                tail.join(" ")
            ),
        })
    }

    fn state_of(&self, x: Vec<f64>) -> Result<Vec<f64>> {
        Ok(match &self.unknown {
            Unknown::State => x,
            Unknown::Potential(phi) => x.iter().map(|&w| phi.inverse(w).unwrap_or(f64::NAN)).collect(),
        })
    }

    /// Nodewise exact solves of the diagonal part with neighbours frozen.
    fn jacobi_sweeps(&self, x: &mut [f64], rhs: &[f64], dt: f64) {
        let n = x.len();
        let implicit: Vec<&PreparedTerm> =
            self.spec.terms.iter().filter(|p| p.term.timing == Timing::Implicit).collect();
        let mut tmp = vec![0.0; n];
        for _ in 0..self.policy.jacobi_sweeps {
            // off-diagonal contributions at the current iterate
            let mut off = vec![0.0; n];
            for p in &implicit {
                let arg: Vec<f64> = match &self.unknown {
                    Unknown::State => x.iter().map(|&v| p.term.phi.eval(v)).collect(),
                    Unknown::Potential(_) => x.to_vec(),
                };
                p.plan.apply_into(&arg, &mut tmp);
                let c = dt * p.term.scale;
                let m = p.plan.mass();
                for i in 0..n {
                    off[i] += c * (tmp[i] + m * arg[i]);
                }
            }
            for i in 0..n {
                let target = rhs[i] + off[i];
                // increasing scalar map s -> own(s) + dt sum s_k m_k phi_k(s)
                let own = |s: f64| -> f64 {
                    match &self.unknown {
                        Unknown::State => {
                            s + implicit
                                .iter()
                                .map(|p| dt * p.term.scale * p.plan.mass() * p.term.phi.eval(s))
                                .sum::<f64>()
                        }
                        Unknown::Potential(phi) => {
                            phi.inverse(s).unwrap_or(f64::NAN)
                                + implicit.iter().map(|p| dt * p.term.scale * p.plan.mass() * s).sum::<f64>()
                        }
                    }
                };
                x[i] = monotone_root(own, target, x[i]);
            }
        }
    }
}

/// Solves `f(s) = target` for increasing `f` by bracketing and bisection.
fn monotone_root(f: impl Fn(f64) -> f64, target: f64, guess: f64) -> f64 {
    let mut step = guess.abs().max(1.0);
    let (mut lo, mut hi) = (guess, guess);
    while f(lo) > target {
        lo -= step;
        step *= 2.0;
    }
    step = guess.abs().max(1.0);
    while f(hi) < target {
        hi += step;
        step *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Jacobi-preconditioned BiCGSTAB. Returns the iterate and iteration count.
fn bicgstab(a: impl Fn(&[f64], &mut [f64]), pre: &[f64], b: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (x, 0);
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            return (x, it);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] / pre[i];
        }
        a(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return (x, it);
        }
        for i in 0..n {
            z[i] = s[i] / pre[i];
        }
        a(&z, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= tol * bnorm || omega == 0.0 {
            return (x, it);
        }
    }
    (x, max_iter)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn linf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

/// One step from `U^{j-1}` to `U^j` (`j >= 1`).
pub fn step(
    spec: &SchemeSpec,
    u_prev: &GridFunction,
    j: usize,
    policy: &SolverPolicy,
) -> Result<(GridFunction, StepDiagnostics)> {
    if j == 0 || j > spec.time.steps() {
        return Err(Error::InvalidParameter(format!("step index {j} outside 1..={}", spec.time.steps())));
    }
    Driver::new(spec, policy, u_prev)?.step(u_prev, j)
}

/// Runs every step of the time grid, calling the observers after each.
pub fn evolve(
    spec: &SchemeSpec,
    u0: &GridFunction,
    policy: &SolverPolicy,
    observers: &mut [&mut dyn Observer],
) -> Result<(GridFunction, RunDiagnostics)> {
    let mut driver = Driver::new(spec, policy, u0)?;
    let mut u = u0.clone();
    let mut run = RunDiagnostics::default();
    let times = spec.time.times().to_vec();
    for (j, &t) in times.iter().enumerate().skip(1) {
        let (next, d) = driver.step(&u, j)?;
        u = next;
        run.record(&d);
        for o in observers.iter_mut() {
            o.observe(j, t, &u, &d)?;
        }
    }
    Ok((u, run))
}
