//! Line-oriented experiment configuration.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Sections and keys (defaults in parentheses):
//!
//! * `[experiment]` `name` (`experiment`), `mode` = `convergence` |
//!   `truncation` | `stefan2d` (`convergence`)
//! * `[equation]` `alpha`, `phi` = `identity` | `power(m)` | `stefan(a,b)` |
//!   `plateau(lo,hi)` | `piecewise(x:y, ...)`, `regularize` = `shift(eps)` |
//!   `linear(eps)` | `mollify(eps)` (none)
//! * `[scheme]` `operator` = `mpr` | `foi` | `soi` | `pdl`, `theta` (0),
//!   `source_theta` (1), `dt` = `power(c,p)` | `cfl(c)`, `far_field` =
//!   `drop` | `absorb` (`drop`), `allow_cfl_violation` (false)
//! * `[solver]` `tol` (1e-10), `max_iter` (50), `dense_limit` (1500)
//! * `[domain]` `box` = `lo:hi` per axis, comma separated; `t_final` (1),
//!   `h0` (0.5), `levels`, `boxes` = half-widths for `truncation`
//! * `[data]` `initial` = `reference` | `zero` | `bump` | `squares`
//!   (`reference`), `reference` = `fractional_heat` | `barenblatt(m)` |
//!   `separable(linear|sqrt, p)` | `none` (`none`), `source` = `zero` |
//!   `manufactured(k)` (`zero`)
//! * `[stefan2d]` `nonlocal_scale` (1), `reference_h`, `sigma` (`0.5, 0.47`)
//! * `[output]` `dir`, `snapshot_times`, `parallel_levels` (false)

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::experiments::{DtRule, ExperimentConfig, InitialData, SchemeKind, SourceMode, StudyKind};
use crate::nonlinearity::{Nonlinearity, Regularization};
use crate::operators::FarField;
use crate::reference::{Amplitude, Barenblatt, ReferenceSolution, SeparableSolution};
use crate::stepper::SolverPolicy;

/// A parsed file: the experiment plus output settings.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub output_dir: Option<PathBuf>,
}

const KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["name", "mode"]),
    ("equation", &["alpha", "phi", "regularize"]),
    ("scheme", &["operator", "theta", "source_theta", "dt", "far_field", "allow_cfl_violation"]),
    ("solver", &["tol", "max_iter", "dense_limit"]),
    ("domain", &["box", "t_final", "h0", "levels", "boxes"]),
    ("data", &["initial", "reference", "source"]),
    ("stefan2d", &["nonlocal_scale", "reference_h", "sigma"]),
    ("output", &["dir", "snapshot_times", "parallel_levels"]),
];

struct Entries {
    map: BTreeMap<(String, String), (usize, String)>,
    last_line: usize,
}

impl Entries {
    fn get(&self, section: &str, key: &str) -> Option<(usize, &str)> {
        self.map.get(&(section.to_string(), key.to_string())).map(|(l, v)| (*l, v.as_str()))
    }

    fn required(&self, section: &str, key: &str) -> Result<(usize, &str)> {
        self.get(section, key)
            .ok_or_else(|| Error::Config { line: self.last_line, msg: format!("missing [{section}] {key}") })
    }

    fn parse_or<T>(&self, section: &str, key: &str, default: T, f: impl Fn(&str) -> Option<T>) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some((line, v)) => f(v).ok_or_else(|| Error::Config { line, msg: format!("bad value for {key}: {v:?}") }),
        }
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    let mut section: Option<String> = None;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim();
            if !KEYS.iter().any(|(sec, _)| *sec == name) {
                return Err(Error::Config { line, msg: format!("unknown section [{name}]") });
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((k, v)) = s.split_once('=') else {
            return Err(Error::Config { line, msg: format!("expected key = value, got {s:?}") });
        };
        let Some(sec) = &section else {
            return Err(Error::Config { line, msg: "key outside of a section".into() });
        };
        let (k, v) = (k.trim(), v.trim());
        let allowed = KEYS.iter().find(|(name, _)| name == sec).map(|(_, keys)| *keys).unwrap_or(&[]);
        if !allowed.contains(&k) {
            return Err(Error::Config { line, msg: format!("unknown key {k:?} in [{sec}]") });
        }
        if map.insert((sec.clone(), k.to_string()), (line, v.to_string())).is_some() {
            return Err(Error::Config { line, msg: format!("duplicate key {k:?} in [{sec}]") });
        }
    }
    Ok(Entries { map, last_line })
}

/// `name(a, b)` -> `("name", ["a", "b"])`; a bare word has no arguments.
fn call(s: &str) -> Option<(&str, Vec<&str>)> {
    let s = s.trim();
    match s.find('(') {
        None => Some((s, Vec::new())),
        Some(i) => {
            let inner = s[i + 1..].strip_suffix(')')?;
            let args = if inner.trim().is_empty() { Vec::new() } else { inner.split(',').map(str::trim).collect() };
            Some((s[..i].trim(), args))
        }
    }
}

fn num(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn list(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(num).collect()
}

fn boolean(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

/// Parses the nonlinearity vocabulary.
pub fn parse_phi(s: &str) -> Result<Nonlinearity> {
    let bad = || Error::InvalidNonlinearity(format!("cannot parse {s:?}"));
    let (name, args) = call(s).ok_or_else(bad)?;
    let nums = || args.iter().map(|a| num(a)).collect::<Option<Vec<f64>>>().ok_or_else(bad);
    match (name, args.len()) {
        ("identity", 0) => Ok(Nonlinearity::Identity),
        ("power", 1) => Nonlinearity::power(nums()?[0]),
        ("stefan", 2) => {
            let v = nums()?;
            Nonlinearity::stefan(v[0], v[1])
        }
        ("plateau", 2) => {
            let v = nums()?;
            Nonlinearity::plateau(v[0], v[1])
        }
        ("piecewise", n) if n >= 2 => {
            let knots = args
                .iter()
                .map(|a| {
                    let (x, y) = a.split_once(':')?;
                    Some((num(x)?, num(y)?))
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(bad)?;
            Nonlinearity::piecewise(knots)
        }
        _ => Err(bad()),
    }
}

fn parse_regularization(s: &str) -> Option<(Regularization, f64)> {
    let (name, args) = call(s)?;
    let kind = match name {
        "shift" => Regularization::Shift,
        "linear" => Regularization::Linear,
        "mollify" => Regularization::Mollify,
        _ => return None,
    };
    match args.as_slice() {
        [e] => Some((kind, num(e)?)),
        _ => None,
    }
}

fn parse_dt(s: &str) -> Option<DtRule> {
    let (name, args) = call(s)?;
    match (name, args.as_slice()) {
        ("power", [c, p]) => Some(DtRule::Power { c: num(c)?, p: num(p)? }),
        ("cfl", [c]) => Some(DtRule::Cfl { c: num(c)? }),
        _ => None,
    }
}

fn parse_box(s: &str) -> Option<Vec<(f64, f64)>> {
    s.split(',')
        .map(|axis| {
            let (a, b) = axis.split_once(':')?;
            let (a, b) = (num(a)?, num(b)?);
            (a < b).then_some((a, b))
        })
        .collect()
}

fn parse_reference(s: &str, alpha: f64) -> Result<Option<ReferenceSolution>> {
    let bad = || Error::InvalidParameter(format!("cannot parse reference {s:?}"));
    let (name, args) = call(s).ok_or_else(bad)?;
    Ok(match (name, args.as_slice()) {
        ("none", []) => None,
        ("fractional_heat", []) => Some(ReferenceSolution::FractionalHeat),
        ("barenblatt", [m]) => Some(ReferenceSolution::Barenblatt(Barenblatt::new(alpha, num(m).ok_or_else(bad)?)?)),
        ("separable", [a, p]) => {
            let amp = match *a {
                "linear" => Amplitude::Linear,
                "sqrt" => Amplitude::Sqrt,
                _ => return Err(bad()),
            };
            Some(ReferenceSolution::Separable(SeparableSolution::new(amp, num(p).ok_or_else(bad)?)?))
        }
        _ => return Err(bad()),
    })
}

/// Wraps semantic errors with the line of the offending key.
fn at<T>(line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::Config { line, msg: other.to_string() },
    })
}

/// Parses a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let e = tokenize(text)?;
    let name = e.get("experiment", "name").map_or("experiment", |(_, v)| v).to_string();
    let (alpha_line, alpha) = e.required("equation", "alpha")?;
    let alpha = num(alpha).ok_or(Error::Config { line: alpha_line, msg: format!("bad alpha {alpha:?}") })?;
    let (phi_line, phi) = e.required("equation", "phi")?;
    let mut phi = at(phi_line, parse_phi(phi))?;
    if let Some((line, v)) = e.get("equation", "regularize") {
        let (kind, eps) =
            parse_regularization(v).ok_or(Error::Config { line, msg: format!("bad regularization {v:?}") })?;
        if matches!(phi, Nonlinearity::Piecewise { .. }) {
            return Err(Error::Config { line, msg: "piecewise nonlinearities are not regularized".into() });
        }
        phi = at(line, phi.regularize(kind, eps))?;
    }

    let mode = e.get("experiment", "mode").map_or("convergence", |(_, v)| v);
    let study = match mode {
        "convergence" => StudyKind::Convergence,
        "truncation" => {
            let (line, v) = e.required("domain", "boxes")?;
            let half_widths = list(v)
                .filter(|l| l.iter().all(|x| *x > 0.0))
                .ok_or(Error::Config { line, msg: format!("bad box half-widths {v:?}") })?;
            StudyKind::Truncation { half_widths }
        }
        "stefan2d" => {
            let nonlocal_scale = e.parse_or("stefan2d", "nonlocal_scale", 1.0, num)?;
            let (line, v) = e.required("stefan2d", "reference_h")?;
            let reference_h =
                num(v).filter(|x| *x > 0.0).ok_or(Error::Config { line, msg: format!("bad reference_h {v:?}") })?;
            let sigma = e.parse_or("stefan2d", "sigma", vec![0.5, 0.47], |s| list(s).filter(|l| l.len() == 2))?;
            StudyKind::Stefan2d { nonlocal_scale, reference_h, sigma }
        }
        other => {
            let line = e.get("experiment", "mode").map_or(0, |(l, _)| l);
            return Err(Error::Config { line, msg: format!("unknown mode {other:?}") });
        }
    };

    let scheme = match (&study, e.get("scheme", "operator")) {
        (_, Some((line, v))) => {
            SchemeKind::parse(v).ok_or(Error::Config { line, msg: format!("unknown operator {v:?}") })?
        }
        (StudyKind::Stefan2d { .. }, None) => SchemeKind::Pdl,
        (_, None) => return Err(e.required("scheme", "operator").unwrap_err()),
    };
    let theta = e.parse_or("scheme", "theta", 0.0, num)?;
    let source_theta = e.parse_or("scheme", "source_theta", 1.0, num)?;
    let (dt_line, dt) = e.required("scheme", "dt")?;
    let dt = parse_dt(dt).ok_or(Error::Config { line: dt_line, msg: format!("bad time-step rule {dt:?}") })?;
    let far_field = e.parse_or("scheme", "far_field", FarField::Drop, |s| match s {
        "drop" => Some(FarField::Drop),
        "absorb" => Some(FarField::Absorb),
        _ => None,
    })?;
    let defaults = SolverPolicy::default();
    let policy = SolverPolicy {
        tol: e.parse_or("solver", "tol", defaults.tol, |s| num(s).filter(|v| *v > 0.0))?,
        max_iter: e.parse_or("solver", "max_iter", defaults.max_iter, |s| s.parse().ok())?,
        dense_limit: e.parse_or("solver", "dense_limit", defaults.dense_limit, |s| s.parse().ok())?,
        allow_cfl_violation: e.parse_or("scheme", "allow_cfl_violation", false, boolean)?,
        ..defaults
    };

    let (box_line, b) = e.required("domain", "box")?;
    let bounds = parse_box(b).ok_or(Error::Config { line: box_line, msg: format!("bad box {b:?}") })?;
    let t_final = e.parse_or("domain", "t_final", 1.0, |s| num(s).filter(|v| *v > 0.0))?;
    let h0 = e.parse_or("domain", "h0", 0.5, |s| num(s).filter(|v| *v > 0.0))?;
    let (levels_line, lv) = e.required("domain", "levels")?;
    let levels: usize =
        lv.parse().map_err(|_| Error::Config { line: levels_line, msg: format!("bad levels {lv:?}") })?;
    if levels < 2 {
        return Err(Error::Config {
            line: levels_line,
            msg: format!("a ladder needs at least 2 levels, got {levels}"),
        });
    }

    let initial = e.parse_or("data", "initial", InitialData::Reference, |s| match s {
        "reference" => Some(InitialData::Reference),
        "zero" => Some(InitialData::Zero),
        "bump" => Some(InitialData::Bump),
        "squares" => Some(InitialData::Squares),
        _ => None,
    })?;
    let reference = match e.get("data", "reference") {
        Some((line, v)) => at(line, parse_reference(v, alpha))?,
        None => None,
    };
    let source = e.parse_or("data", "source", SourceMode::Zero, |s| {
        let (name, args) = call(s)?;
        match (name, args.as_slice()) {
            ("zero", []) => Some(SourceMode::Zero),
            ("manufactured", []) => Some(SourceMode::Manufactured { table_points: 0 }),
            ("manufactured", [k]) => Some(SourceMode::Manufactured { table_points: k.parse().ok()? }),
            _ => None,
        }
    })?;

    let output_dir = e.get("output", "dir").map(|(_, v)| PathBuf::from(v));
    let snapshot_times = e.parse_or("output", "snapshot_times", Vec::new(), list)?;
    let parallel_levels = e.parse_or("output", "parallel_levels", false, boolean)?;

    let experiment = ExperimentConfig {
        name,
        alpha,
        phi,
        reference,
        scheme,
        theta,
        source_theta,
        dt,
        far_field,
        bounds,
        t_final,
        h0,
        levels,
        initial,
        source,
        study,
        policy,
        snapshot_times,
        parallel_levels,
    };
    Ok(RunConfig { experiment, output_dir })
}
