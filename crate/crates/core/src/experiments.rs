//! Convergence studies on halving ladders `h_j = h_0 2^{-j}`, rate tables,
//! the domain-truncation study and the 2D Stefan self-convergence run.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{make_grid, uniform_time_grid, Grid, GridFunction};
use crate::levy_measure::LevyMeasure;
use crate::nonlinearity::Nonlinearity;
use crate::operators::{
    admissibility_check, build_interp_quadrature, build_local, build_midpoint, build_pdl_1d, build_pdl_axis,
    build_trivial_singular, build_vanishing_viscosity_coordinate, sum, FarField, StencilOperator,
};
use crate::reference::{ManufacturedSource, ReferenceSolution};
use crate::stepper::{evolve, Observer, RunDiagnostics, SchemeSpec, SnapshotWriter, SolverPolicy, Source};

/// Discretizations of the 1D fractional Laplacian.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    /// Midpoint rule for `|z| >= h`, singular part dropped.
    Mpr,
    /// Piecewise linear interpolation quadrature, singular part dropped.
    Foi,
    /// Quadratic interpolation quadrature plus coordinate vanishing viscosity.
    Soi,
    /// Powers of the discrete Laplacian.
    Pdl,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Mpr => "mpr",
            SchemeKind::Foi => "foi",
            SchemeKind::Soi => "soi",
            SchemeKind::Pdl => "pdl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mpr" => Some(SchemeKind::Mpr),
            "foi" => Some(SchemeKind::Foi),
            "soi" => Some(SchemeKind::Soi),
            "pdl" => Some(SchemeKind::Pdl),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtRule {
    /// `dt = c h^p`.
    Power { c: f64, p: f64 },
    /// `dt = c` times the CFL bound of the level.
    Cfl { c: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialData {
    /// The reference solution at `t = 0`.
    Reference,
    Zero,
    /// `exp(-1/(4 - x^2))` on `(-2, 2)`.
    Bump,
    /// `3 (1_{S1} - 1_{S2}) + 4 1_{S3}` with squares `S1 = |x|,|y| < 5`,
    /// `S2 = |x|,|y| < 2`, `S3 = 3 < |x|,|y| < 4`.
    Squares,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceMode {
    Zero,
    /// Forcing that makes the reference solution exact; non-separable
    /// cases are tabulated at `table_points` times (0: exact every step).
    Manufactured {
        table_points: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum StudyKind {
    Convergence,
    /// Same ladder on the boxes `[-L, L]`.
    Truncation {
        half_widths: Vec<f64>,
    },
    /// Self-convergence in 2D against a run at `reference_h`; the nonlocal
    /// part is scaled by `nonlocal_scale`.
    Stefan2d {
        nonlocal_scale: f64,
        reference_h: f64,
        sigma: Vec<f64>,
    },
}

/// Everything needed to run one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: String,
    pub alpha: f64,
    pub phi: Nonlinearity,
    pub reference: Option<ReferenceSolution>,
    pub scheme: SchemeKind,
    pub theta: f64,
    pub source_theta: f64,
    pub dt: DtRule,
    pub far_field: FarField,
    pub bounds: Vec<(f64, f64)>,
    pub t_final: f64,
    pub h0: f64,
    pub levels: usize,
    pub initial: InitialData,
    pub source: SourceMode,
    pub study: StudyKind,
    pub policy: SolverPolicy,
    pub snapshot_times: Vec<f64>,
    /// Run ladder levels concurrently.
    pub parallel_levels: bool,
}

impl ExperimentConfig {
    /// A 1D convergence study with explicit time stepping and no forcing.
    pub fn new(name: &str, alpha: f64, phi: Nonlinearity, scheme: SchemeKind, half_width: f64) -> Self {
        ExperimentConfig {
            name: name.to_string(),
            alpha,
            phi,
            reference: None,
            scheme,
            theta: 0.0,
            source_theta: 1.0,
            dt: DtRule::Cfl { c: 1.0 },
            far_field: FarField::Drop,
            bounds: vec![(-half_width, half_width)],
            t_final: 1.0,
            h0: 0.5,
            levels: 4,
            initial: InitialData::Reference,
            source: SourceMode::Zero,
            study: StudyKind::Convergence,
            policy: SolverPolicy::default(),
            snapshot_times: Vec::new(),
            parallel_levels: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn ladder(&self) -> Vec<f64> {
        (0..self.levels).map(|j| self.h0 * 0.5f64.powi(j as i32)).collect()
    }

    fn check(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidParameter(format!(
                "a convergence ladder needs at least 2 levels, got {}",
                self.levels
            )));
        }
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return Err(Error::InvalidParameter(format!("h0 must be positive, got {}", self.h0)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {}", self.t_final)));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 2), got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParameter(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        match (&self.study, self.dim()) {
            (StudyKind::Stefan2d { .. }, 2) => {}
            (StudyKind::Stefan2d { .. }, d) => {
                return Err(Error::InvalidParameter(format!("the 2D Stefan study needs a 2D box, got {d}D")))
            }
            (_, 1) => {
                if self.reference.is_none() {
                    return Err(Error::InvalidParameter("error measurement needs a reference solution".into()));
                }
            }
            (_, d) => return Err(Error::Unsupported(format!("{d}D convergence against a reference solution"))),
        }
        if matches!(self.source, SourceMode::Manufactured { .. }) && self.reference.is_none() {
            return Err(Error::InvalidParameter("a manufactured source needs a reference solution".into()));
        }
        if self.initial == InitialData::Reference && self.reference.is_none() {
            return Err(Error::InvalidParameter("initial data from the reference needs a reference solution".into()));
        }
        Ok(())
    }
}

/// Assembles the spatial operator of a level.
pub fn build_operator(cfg: &ExperimentConfig, h: f64, bounds: &[(f64, f64)]) -> Result<StencilOperator> {
    let diam = bounds.iter().map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
    let far = cfg.far_field;
    if let StudyKind::Stefan2d { nonlocal_scale, sigma, .. } = &cfg.study {
        let local = build_local(std::slice::from_ref(sigma), h.sqrt(), h)?;
        let m = ((bounds[0].1 - bounds[0].0) / h).round() as usize;
        let nonlocal = build_pdl_axis(2, 0, cfg.alpha, h, m, far)?.scaled(*nonlocal_scale)?;
        return sum(&[local, nonlocal]);
    }
    let mu = LevyMeasure::fractional_laplacian(1, cfg.alpha)?;
    let m = (diam / h).round() as usize;
    let r_max = m as f64 * h;
    match cfg.scheme {
        SchemeKind::Mpr => sum(&[build_midpoint(&mu, h, h, r_max, far)?, build_trivial_singular(1, h)?]),
        SchemeKind::Foi => sum(&[build_interp_quadrature(&mu, 1, h, h, r_max, far)?, build_trivial_singular(1, h)?]),
        SchemeKind::Soi => {
            sum(&[build_interp_quadrature(&mu, 2, h, h, r_max, far)?, build_vanishing_viscosity_coordinate(&mu, h, h)?])
        }
        SchemeKind::Pdl => build_pdl_1d(cfg.alpha, h, m, far),
    }
}

fn initial_data(cfg: &ExperimentConfig, grid: &Grid) -> GridFunction {
    match cfg.initial {
        InitialData::Reference => {
            let r = cfg.reference.expect("checked");
            GridFunction::point_sample(grid, |x| r.eval(x[0], 0.0))
        }
        InitialData::Zero => GridFunction::zeros(grid),
        InitialData::Bump => GridFunction::point_sample(grid, |x| {
            let s = 4.0 - x[0] * x[0];
            if s > 0.0 {
                (-1.0 / s).exp()
            } else {
                0.0
            }
        }),
        InitialData::Squares => GridFunction::point_sample(grid, |x| {
            let (ax, ay) = (x[0].abs(), x.get(1).map_or(0.0, |y| y.abs()));
            let s1 = ax < 5.0 && ay < 5.0;
            let s2 = ax < 2.0 && ay < 2.0;
            let s3 = ax > 3.0 && ax < 4.0 && ay > 3.0 && ay < 4.0;
            3.0 * (s1 as u8 as f64 - s2 as u8 as f64) + 4.0 * s3 as u8 as f64
        }),
    }
}

/// Operators, grid, data and time step of one ladder level.
pub struct Level {
    pub h: f64,
    pub dt: f64,
    pub grid: Grid,
    pub op: StencilOperator,
    pub u0: GridFunction,
    pub spec: SchemeSpec,
    pub cfl_bound: Option<f64>,
}

fn source_envelope(src: &dyn Source, n: usize, t_final: f64) -> Result<f64> {
    let mut buf = vec![0.0; n];
    let mut sup = 0.0f64;
    for k in 0..=8 {
        src.eval_into(t_final * k as f64 / 8.0, &mut buf)?;
        sup = sup.max(buf.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    Ok(sup * t_final)
}

/// Builds one level on `bounds` with spacing `h`.
pub fn prepare_level(cfg: &ExperimentConfig, h: f64, bounds: &[(f64, f64)]) -> Result<Level> {
    let grid = make_grid(bounds, h)?;
    let op = build_operator(cfg, h, bounds)?;
    let u0 = initial_data(cfg, &grid);
    let source: Option<Arc<dyn Source>> = match cfg.source {
        SourceMode::Zero => None,
        SourceMode::Manufactured { table_points } => {
            let r = cfg.reference.expect("checked");
            Some(Arc::new(ManufacturedSource::new(r, &cfg.phi, cfg.alpha, &grid, cfg.t_final, table_points)?))
        }
    };
    let envelope = u0.norm_linf()
        + match &source {
            Some(s) => source_envelope(s.as_ref(), grid.len(), cfg.t_final)?,
            None => 0.0,
        };
    // probe scheme to size the step
    let probe_time = uniform_time_grid(cfg.t_final, cfg.t_final)?;
    let probe = SchemeSpec::theta(&grid, op.clone(), cfg.phi.clone(), cfg.theta, probe_time)?;
    let cfl_bound = match probe.cfl_max_dt(envelope) {
        Ok(b) => b,
        Err(Error::UnboundedLipschitz { .. }) if cfg.policy.allow_cfl_violation => None,
        Err(e) => return Err(e),
    };
    let dt = match cfg.dt {
        DtRule::Power { c, p } => c * h.powf(p),
        DtRule::Cfl { c } => {
            c * cfl_bound
                .ok_or_else(|| Error::InvalidParameter("a CFL time-step rule needs an explicit term".into()))?
        }
    };
    if let (Some(b), false) = (cfl_bound, cfg.policy.allow_cfl_violation) {
        if dt > b * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, bound: b });
        }
    }
    let time = uniform_time_grid(cfg.t_final, dt)?;
    let dt = time.max_dt();
    let mut spec = SchemeSpec::theta(&grid, op.clone(), cfg.phi.clone(), cfg.theta, time)?;
    if let Some(s) = source {
        spec = spec.with_source(s, cfg.source_theta)?;
    }
    Ok(Level { h, dt, grid, op, u0, spec, cfl_bound })
}

/// Result of evolving one level.
#[derive(Clone, Debug)]
pub struct LevelOutcome {
    pub h: f64,
    pub dt: f64,
    pub u: GridFunction,
    pub run: RunDiagnostics,
    pub cfl_bound: Option<f64>,
    pub stencil_len: usize,
    pub absorbed_tail: f64,
    pub dropped_tail: f64,
}

pub fn run_level(
    cfg: &ExperimentConfig,
    h: f64,
    bounds: &[(f64, f64)],
    observers: &mut [&mut dyn Observer],
) -> Result<LevelOutcome> {
    let level = prepare_level(cfg, h, bounds)?;
    let (u, run) = evolve(&level.spec, &level.u0, &cfg.policy, observers)?;
    log::info!(
        "{}: h = {h:e}, dt = {:e}, {} steps, {} Newton iterations",
        cfg.name,
        level.dt,
        run.steps,
        run.newton_iterations
    );
    Ok(LevelOutcome {
        h,
        dt: level.dt,
        u,
        run,
        cfl_bound: level.cfl_bound,
        stencil_len: level.op.len(),
        absorbed_tail: level.op.absorbed_tail(),
        dropped_tail: level.op.dropped_tail(),
    })
}

/// `log2(e_prev / e)`; undefined unless both errors are positive and finite.
pub fn rate(e_prev: f64, e: f64) -> Option<f64> {
    (e_prev > 0.0 && e > 0.0 && e_prev.is_finite() && e.is_finite()).then(|| (e_prev / e).log2())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRecord {
    pub h: f64,
    pub dt: f64,
    pub err_linf: f64,
    pub rate_linf: Option<f64>,
    pub err_l1: f64,
    pub rate_l1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyMeta {
    pub scheme: String,
    pub alpha: f64,
    pub phi: String,
    pub bounds: Vec<(f64, f64)>,
    pub t_final: f64,
}

/// Per-level run log kept for manifests.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelLog {
    pub h: f64,
    pub dt: f64,
    pub steps: usize,
    pub cfl_bound: Option<f64>,
    pub stencil_len: usize,
    pub absorbed_tail: f64,
    pub dropped_tail: f64,
    pub newton_iterations: usize,
    pub max_newton_iterations: usize,
    pub linear_iterations: usize,
    pub boundary_flux: f64,
    pub source_mass: f64,
}

impl LevelLog {
    fn from_outcome(o: &LevelOutcome) -> Self {
        LevelLog {
            h: o.h,
            dt: o.dt,
            steps: o.run.steps,
            cfl_bound: o.cfl_bound,
            stencil_len: o.stencil_len,
            absorbed_tail: o.absorbed_tail,
            dropped_tail: o.dropped_tail,
            newton_iterations: o.run.newton_iterations,
            max_newton_iterations: o.run.max_newton_iterations,
            linear_iterations: o.run.linear_iterations,
            boundary_flux: o.run.boundary_flux,
            source_mass: o.run.source_mass,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStudy {
    pub meta: StudyMeta,
    pub records: Vec<StudyRecord>,
    pub logs: Vec<LevelLog>,
}

impl ConvergenceStudy {
    /// Fills rates from consecutive errors.
    pub fn from_errors(meta: StudyMeta, rows: Vec<(f64, f64, f64, f64)>, logs: Vec<LevelLog>) -> Self {
        let mut records: Vec<StudyRecord> = Vec::with_capacity(rows.len());
        for (i, &(h, dt, linf, l1)) in rows.iter().enumerate() {
            let (rate_linf, rate_l1) = match i {
                0 => (None, None),
                _ => (rate(rows[i - 1].2, linf), rate(rows[i - 1].3, l1)),
            };
            records.push(StudyRecord { h, dt, err_linf: linf, rate_linf, err_l1: l1, rate_l1 });
        }
        ConvergenceStudy { meta, records, logs }
    }

    pub fn rates_linf(&self) -> Vec<Option<f64>> {
        self.records.iter().skip(1).map(|r| r.rate_linf).collect()
    }

    pub fn rates_l1(&self) -> Vec<Option<f64>> {
        self.records.iter().skip(1).map(|r| r.rate_l1).collect()
    }

    /// `h,dt,err_linf,rate_linf,err_l1,rate_l1` with 17 significant digits
    /// and blank undefined rates.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,dt,err_linf,rate_linf,err_l1,rate_l1\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
                r.h,
                r.dt,
                r.err_linf,
                opt(r.rate_linf),
                r.err_l1,
                opt(r.rate_l1)
            );
        }
        s
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "# {} alpha={} phi={} box={:?} T={}\n{:>10} {:>10} {:>11} {:>6} {:>11} {:>6}\n",
            self.meta.scheme,
            self.meta.alpha,
            self.meta.phi,
            self.meta.bounds,
            self.meta.t_final,
            "h",
            "dt",
            "err_linf",
            "rate",
            "err_l1",
            "rate"
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:>10.3e} {:>10.3e} {:>11.3e} {:>6} {:>11.3e} {:>6}",
                r.h,
                r.dt,
                r.err_linf,
                opt(r.rate_linf),
                r.err_l1,
                opt(r.rate_l1)
            );
        }
        s
    }
}

fn meta(cfg: &ExperimentConfig, bounds: &[(f64, f64)]) -> StudyMeta {
    StudyMeta {
        scheme: cfg.scheme.name().to_string(),
        alpha: cfg.alpha,
        phi: cfg.phi.to_string(),
        bounds: bounds.to_vec(),
        t_final: cfg.t_final,
    }
}

/// Nodal errors against the reference at the final time: `(L^inf, L^1)`.
pub fn nodal_errors(u: &GridFunction, reference: &ReferenceSolution, t: f64) -> (f64, f64) {
    let exact = GridFunction::point_sample(u.grid(), |x| reference.eval(x[0], t));
    let e = u.sub(&exact).expect("same grid");
    (e.norm_linf(), e.norm_l1())
}

fn run_ladder(cfg: &ExperimentConfig, bounds: &[(f64, f64)]) -> Result<ConvergenceStudy> {
    cfg.check()?;
    let reference = cfg.reference.expect("checked");
    let hs = cfg.ladder();
    let one = |h: f64| -> Result<(LevelOutcome, f64, f64)> {
        let o = run_level(cfg, h, bounds, &mut [])?;
        let (linf, l1) = nodal_errors(&o.u, &reference, cfg.t_final);
        Ok((o, linf, l1))
    };
    let outcomes: Vec<(LevelOutcome, f64, f64)> = if cfg.parallel_levels {
        hs.par_iter().map(|&h| one(h)).collect::<Result<_>>()?
    } else {
        hs.iter().map(|&h| one(h)).collect::<Result<_>>()?
    };
    let rows = outcomes.iter().map(|(o, a, b)| (o.h, o.dt, *a, *b)).collect();
    let logs = outcomes.iter().map(|(o, _, _)| LevelLog::from_outcome(o)).collect();
    Ok(ConvergenceStudy::from_errors(meta(cfg, bounds), rows, logs))
}

/// Evolves every level of the ladder and tabulates errors and rates.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceStudy> {
    run_ladder(cfg, &cfg.bounds)
}

/// The ladder of `cfg` on each box `[-L, L]`.
pub fn domain_truncation_study(cfg: &ExperimentConfig, half_widths: &[f64]) -> Result<Vec<ConvergenceStudy>> {
    half_widths.iter().map(|&l| run_ladder(cfg, &[(-l, l)])).collect()
}

/// Smallest error over the ladder: `(L^inf, L^1)`.
pub fn plateau(study: &ConvergenceStudy) -> (f64, f64) {
    study.records.iter().fold((f64::INFINITY, f64::INFINITY), |(a, b), r| (a.min(r.err_linf), b.min(r.err_l1)))
}

pub struct Stefan2dResult {
    /// Errors relative to the reference level's norms.
    pub study: ConvergenceStudy,
    pub reference: GridFunction,
    pub snapshots: Vec<PathBuf>,
    pub mass: Vec<(f64, f64)>,
}

/// Relative self-convergence errors of the ladder against a fine run.
pub fn stefan_2d_demo(cfg: &ExperimentConfig, snapshot_dir: Option<&std::path::Path>) -> Result<Stefan2dResult> {
    cfg.check()?;
    let StudyKind::Stefan2d { reference_h, .. } = cfg.study else {
        return Err(Error::InvalidParameter("not a 2D Stefan configuration".into()));
    };
    let hs = cfg.ladder();
    let finest = *hs.last().expect("levels >= 2");
    let ratio = finest / reference_h;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 2.0 {
        return Err(Error::InvalidParameter(format!(
            "reference spacing {reference_h} must divide the finest ladder spacing {finest}"
        )));
    }
    let mut snaps =
        snapshot_dir.map(|d| SnapshotWriter::new(d, &format!("{}_ref", cfg.name), cfg.snapshot_times.clone()));
    let mut tracker = MassSeries::default();
    let fine = {
        let mut obs: Vec<&mut dyn Observer> = vec![&mut tracker];
        if let Some(s) = snaps.as_mut() {
            obs.push(s);
        }
        run_level(cfg, reference_h, &cfg.bounds, &mut obs)?
    };
    let norm_inf = fine.u.norm_linf();
    let one = |h: f64| -> Result<(LevelOutcome, f64, f64)> {
        let o = run_level(cfg, h, &cfg.bounds, &mut [])?;
        let r = fine.u.restrict_to(o.u.grid())?;
        let e = o.u.sub(&r)?;
        Ok((o, e.norm_linf() / norm_inf, e.norm_l1() / r.norm_l1()))
    };
    let outcomes: Vec<(LevelOutcome, f64, f64)> = if cfg.parallel_levels {
        hs.par_iter().map(|&h| one(h)).collect::<Result<_>>()?
    } else {
        hs.iter().map(|&h| one(h)).collect::<Result<_>>()?
    };
    let rows = outcomes.iter().map(|(o, a, b)| (o.h, o.dt, *a, *b)).collect();
    let logs = outcomes.iter().map(|(o, _, _)| LevelLog::from_outcome(o)).collect();
    let mut m = meta(cfg, &cfg.bounds);
    m.scheme = "local+pdl".to_string();
    Ok(Stefan2dResult {
        study: ConvergenceStudy::from_errors(m, rows, logs),
        reference: fine.u,
        snapshots: snaps.map(|s| s.written).unwrap_or_default(),
        mass: tracker.0,
    })
}

/// `(t, h^N sum U)` after every step.
#[derive(Default)]
struct MassSeries(Vec<(f64, f64)>);

impl Observer for MassSeries {
    fn observe(&mut self, _j: usize, t: f64, u: &GridFunction, _d: &crate::stepper::StepDiagnostics) -> Result<()> {
        self.0.push((t, u.integral()));
        Ok(())
    }
}

/// Outcome of checking a configuration without evolving it.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub h: f64,
    pub dt: f64,
    pub cfl_bound: Option<f64>,
    pub admissible: bool,
    pub total_mass: f64,
    pub absorbed_tail: f64,
    pub dropped_tail: f64,
}

/// Builds the coarsest level and checks admissibility and the CFL condition.
pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    cfg.check()?;
    let bounds = match &cfg.study {
        StudyKind::Truncation { half_widths } => {
            let l = half_widths.iter().copied().fold(f64::NAN, f64::min);
            if !(l > 0.0) {
                return Err(Error::InvalidParameter("truncation study needs positive box half-widths".into()));
            }
            vec![(-l, l)]
        }
        _ => cfg.bounds.clone(),
    };
    let level = prepare_level(cfg, cfg.h0, &bounds)?;
    let report = admissibility_check(&level.op);
    if !report.admissible() {
        return Err(Error::InvalidOperator(format!(
            "stencil not admissible: symmetric={}, min weight={:e}",
            report.symmetric, report.min_weight
        )));
    }
    Ok(ValidationReport {
        h: cfg.h0,
        dt: level.dt,
        cfl_bound: level.cfl_bound,
        admissible: true,
        total_mass: report.total_mass,
        absorbed_tail: report.absorbed_tail,
        dropped_tail: report.dropped_tail,
    })
}
