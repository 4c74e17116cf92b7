//! Nondecreasing continuous nonlinearities `phi` with `phi(0) = 0`, and
//! their Lipschitz regularizations.

use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;

/// How an irregular `phi` is approximated by a Lipschitz one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularization {
    /// `phi(xi + eps) - phi(eps)` for `xi >= 0`, `phi(xi - eps) - phi(-eps)` below.
    Shift,
    /// `phi(xi) + eps xi`: strictly increasing.
    Linear,
    /// Convolution with a smooth bump of radius `eps`, recentred so that
    /// the result vanishes at zero.
    Mollify,
}

/// A nonlinearity of the generalized porous medium / Stefan equation.
#[derive(Clone, Debug, PartialEq)]
pub enum Nonlinearity {
    Identity,
    /// `xi |xi|^{m-1}`, `m > 0`.
    Power {
        m: f64,
    },
    /// `max(0, a xi - b)`.
    Stefan {
        a: f64,
        b: f64,
    },
    /// `xi` below `lo`, `lo` on `[lo, hi)`, `xi - (hi - lo)` from `hi` on.
    Plateau {
        lo: f64,
        hi: f64,
    },
    /// Continuous piecewise linear through the knots, extended by the end
    /// slopes.
    Piecewise {
        knots: Vec<(f64, f64)>,
    },
    Regularized {
        base: Box<Nonlinearity>,
        kind: Regularization,
        eps: f64,
    },
}

const MOLLIFIER_POINTS: usize = 64;

fn bump(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - y * y)).exp()
    }
}

fn bump_prime(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        let d = 1.0 - y * y;
        -2.0 * y / (d * d) * (-1.0 / d).exp()
    }
}

impl Nonlinearity {
    pub fn power(m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidNonlinearity(format!("power must be positive, got {m}")));
        }
        Ok(if m == 1.0 { Nonlinearity::Identity } else { Nonlinearity::Power { m } })
    }

    pub fn stefan(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite() && b >= 0.0 && b.is_finite()) {
            return Err(Error::InvalidNonlinearity(format!("stefan needs a > 0, b >= 0, got ({a}, {b})")));
        }
        Ok(Nonlinearity::Stefan { a, b })
    }

    pub fn plateau(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidNonlinearity(format!("plateau needs 0 <= lo < hi, got ({lo}, {hi})")));
        }
        Ok(Nonlinearity::Plateau { lo, hi })
    }

    pub fn piecewise(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidNonlinearity("piecewise needs at least two knots".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidNonlinearity("knot abscissae must increase".into()));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidNonlinearity("piecewise nonlinearity must be nondecreasing".into()));
            }
        }
        let nl = Nonlinearity::Piecewise { knots };
        if nl.eval(0.0).abs() > 1e-14 {
            return Err(Error::InvalidNonlinearity("piecewise nonlinearity must vanish at zero".into()));
        }
        Ok(nl)
    }

    pub fn regularize(self, kind: Regularization, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidNonlinearity(format!("regularization needs eps > 0, got {eps}")));
        }
        Ok(Nonlinearity::Regularized { base: Box::new(self), kind, eps })
    }

    pub fn eval(&self, xi: f64) -> f64 {
        match self {
            Nonlinearity::Identity => xi,
            Nonlinearity::Power { m } => xi.signum() * xi.abs().powf(*m),
            Nonlinearity::Stefan { a, b } => (a * xi - b).max(0.0),
            Nonlinearity::Plateau { lo, hi } => {
                if xi < *lo {
                    xi
                } else if xi < *hi {
                    *lo
                } else {
                    xi - (hi - lo)
                }
            }
            Nonlinearity::Piecewise { knots } => piecewise_eval(knots, xi),
            Nonlinearity::Regularized { base, kind, eps } => match kind {
                Regularization::Shift => {
                    if xi >= 0.0 {
                        base.eval(xi + eps) - base.eval(*eps)
                    } else {
                        base.eval(xi - eps) - base.eval(-eps)
                    }
                }
                Regularization::Linear => base.eval(xi) + eps * xi,
                Regularization::Mollify => mollified(base, *eps, xi) - mollified(base, *eps, 0.0),
            },
        }
    }

    /// Right derivative (a generalized derivative for semismooth Newton).
    pub fn derivative(&self, xi: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Power { m } => {
                if xi == 0.0 {
                    if *m < 1.0 {
                        f64::INFINITY
                    } else if *m == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    m * xi.abs().powf(m - 1.0)
                }
            }
            Nonlinearity::Stefan { a, b } => {
                if a * xi - b >= 0.0 {
                    *a
                } else {
                    0.0
                }
            }
            Nonlinearity::Plateau { lo, hi } => {
                if xi >= *lo && xi < *hi {
                    0.0
                } else {
                    1.0
                }
            }
            Nonlinearity::Piecewise { knots } => piecewise_slope(knots, xi),
            Nonlinearity::Regularized { base, kind, eps } => match kind {
                Regularization::Shift => {
                    if xi >= 0.0 {
                        base.derivative(xi + eps)
                    } else {
                        base.derivative(xi - eps)
                    }
                }
                Regularization::Linear => base.derivative(xi) + eps,
                Regularization::Mollify => mollified_derivative(base, *eps, xi),
            },
        }
    }

    /// Lipschitz constant on `[-bound, bound]`; may be infinite.
    pub fn lipschitz(&self, bound: f64) -> f64 {
        let bound = bound.abs();
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Power { m } => {
                if *m < 1.0 {
                    f64::INFINITY
                } else {
                    m * bound.powf(m - 1.0)
                }
            }
            Nonlinearity::Stefan { a, .. } => *a,
            Nonlinearity::Plateau { .. } => 1.0,
            Nonlinearity::Piecewise { knots } => {
                knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).fold(0.0, f64::max)
            }
            Nonlinearity::Regularized { base, kind, eps } => match kind {
                Regularization::Shift => match base.as_ref() {
                    Nonlinearity::Power { m } if *m < 1.0 => m * eps.powf(m - 1.0),
                    b => b.lipschitz(bound + eps),
                },
                Regularization::Linear => base.lipschitz(bound) + eps,
                Regularization::Mollify => {
                    // sample the smooth derivative densely near the origin
                    // and on the range
                    let n = 400;
                    let mut l = 0.0f64;
                    for i in 0..=n {
                        let t = -1.0 + 2.0 * i as f64 / n as f64;
                        l = l.max(mollified_derivative(base, *eps, 3.0 * eps * t).abs());
                        l = l.max(mollified_derivative(base, *eps, bound * t).abs());
                    }
                    l
                }
            },
        }
    }

    /// Whether `phi` is strictly increasing with an explicit inverse.
    pub fn is_invertible(&self) -> bool {
        matches!(self, Nonlinearity::Identity | Nonlinearity::Power { .. })
    }

    /// `phi^{-1}(w)` for invertible nonlinearities.
    pub fn inverse(&self, w: f64) -> Option<f64> {
        match self {
            Nonlinearity::Identity => Some(w),
            Nonlinearity::Power { m } => Some(w.signum() * w.abs().powf(1.0 / m)),
            _ => None,
        }
    }

    /// Derivative of `phi^{-1}` at `w`.
    pub fn inverse_derivative(&self, w: f64) -> Option<f64> {
        match self {
            Nonlinearity::Identity => Some(1.0),
            Nonlinearity::Power { m } => Some(w.abs().powf(1.0 / m - 1.0) / m),
            _ => None,
        }
    }
}

fn piecewise_eval(knots: &[(f64, f64)], xi: f64) -> f64 {
    let n = knots.len();
    let seg = if xi <= knots[0].0 {
        0
    } else if xi >= knots[n - 1].0 {
        n - 2
    } else {
        knots.partition_point(|k| k.0 <= xi) - 1
    };
    let (x0, y0) = knots[seg];
    let (x1, y1) = knots[seg + 1];
    y0 + (y1 - y0) / (x1 - x0) * (xi - x0)
}

fn piecewise_slope(knots: &[(f64, f64)], xi: f64) -> f64 {
    let n = knots.len();
    let seg = if xi < knots[0].0 {
        0
    } else if xi >= knots[n - 1].0 {
        n - 2
    } else {
        knots.partition_point(|k| k.0 <= xi) - 1
    };
    let (x0, y0) = knots[seg];
    let (x1, y1) = knots[seg + 1];
    (y1 - y0) / (x1 - x0)
}

fn mollifier_rule() -> &'static (Vec<f64>, Vec<f64>, f64) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>, f64)> = OnceLock::new();
    RULE.get_or_init(|| {
        let (x, w) = gauss_legendre(MOLLIFIER_POINTS);
        let norm: f64 = x.iter().zip(&w).map(|(y, wi)| wi * bump(*y)).sum();
        (x, w, norm)
    })
}

fn mollified(base: &Nonlinearity, eps: f64, xi: f64) -> f64 {
    let (x, w, norm) = mollifier_rule();
    x.iter().zip(w).map(|(y, wi)| wi * bump(*y) * base.eval(xi - eps * y)).sum::<f64>() / norm
}

fn mollified_derivative(base: &Nonlinearity, eps: f64, xi: f64) -> f64 {
    let (x, w, norm) = mollifier_rule();
    x.iter().zip(w).map(|(y, wi)| wi * bump_prime(*y) * base.eval(xi - eps * y)).sum::<f64>() / (norm * eps)
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Identity => write!(f, "identity"),
            Nonlinearity::Power { m } => write!(f, "power({m})"),
            Nonlinearity::Stefan { a, b } => write!(f, "stefan({a}, {b})"),
            Nonlinearity::Plateau { lo, hi } => write!(f, "plateau({lo}, {hi})"),
            Nonlinearity::Piecewise { knots } => {
                write!(f, "piecewise(")?;
                for (i, (x, y)) in knots.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}:{y}")?;
                }
                write!(f, ")")
            }
            Nonlinearity::Regularized { base, kind, eps } => {
                let k = match kind {
                    Regularization::Shift => "shift",
                    Regularization::Linear => "linear",
                    Regularization::Mollify => "mollify",
                };
                write!(f, "{base} regularized {k} {eps}")
            }
        }
    }
}
