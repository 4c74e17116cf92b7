//! Numerical integration: adaptive Gauss-Kronrod on intervals, geometric
//! shells for half-lines and punctured neighbourhoods of zero, Gauss-Legendre
//! rules, and adaptive tensor cubature on boxes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

const MAX_INTERVALS: usize = 4000;

/// Tolerance pair: the estimate is accepted once
/// `error <= max(abs, rel * |value|)`.
#[derive(Clone, Copy, Debug)]
pub struct Tol {
    pub abs: f64,
    pub rel: f64,
}

impl Tol {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Tol { abs, rel }
    }

    fn bound(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

impl Default for Tol {
    fn default() -> Self {
        Tol::new(1e-13, 1e-11)
    }
}

/// Value and error estimate of a quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// One 21-point Gauss-Kronrod panel; returns (Kronrod value, |K - G|).
pub fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[10];
    let mut rg = 0.0;
    for j in 0..10 {
        let dx = hl * XGK[j];
        let s = f(c - dx) + f(c + dx);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * hl, ((rk - rg) * hl).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss-Kronrod integration over `[a, b]`.
///
/// Never fails; check `error` against the tolerance if it matters.
pub fn integrate_estimate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tol) -> Estimate {
    if a == b {
        return Estimate { value: 0.0, error: 0.0 };
    }
    let (v, e) = gk21(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value: v, error: e });
    let mut total = v;
    let mut err = e;
    while err > tol.bound(total) && heap.len() < MAX_INTERVALS {
        let worst = heap.pop().expect("heap is never empty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a.min(worst.b) || m >= worst.a.max(worst.b) {
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk21(&mut f, worst.a, m);
        let (v2, e2) = gk21(&mut f, m, worst.b);
        total += v1 + v2 - worst.value;
        err += e1 + e2 - worst.error;
        heap.push(Panel { a: worst.a, b: m, value: v1, error: e1 });
        heap.push(Panel { a: m, b: worst.b, value: v2, error: e2 });
    }
    // Re-sum to avoid drift from the running updates.
    let value: f64 = heap.iter().map(|p| p.value).sum();
    let error: f64 = heap.iter().map(|p| p.error).sum();
    Estimate { value, error }
}

/// Adaptive integration over `[a, b]`, failing when the tolerance is
/// missed by more than a factor of 100 or the result is not finite.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: Tol) -> Result<f64> {
    let est = integrate_estimate(f, a, b, tol);
    check(est, a, b, tol)
}

/// Adaptive integration over `[a, b]` with known interior breakpoints.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, points: &[f64], tol: Tol) -> Result<f64> {
    let mut cuts: Vec<f64> = points.iter().copied().filter(|&p| p > a && p < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut lo = a;
    let mut sum = 0.0;
    for hi in cuts.into_iter().chain(std::iter::once(b)) {
        sum += integrate(&mut f, lo, hi, tol)?;
        lo = hi;
    }
    Ok(sum)
}

fn check(est: Estimate, a: f64, b: f64, tol: Tol) -> Result<f64> {
    if !est.value.is_finite() || est.error > 100.0 * tol.bound(est.value) {
        return Err(Error::Quadrature { a, b, value: est.value, error: est.error });
    }
    Ok(est.value)
}

/// Integral over `[a, inf)` with `a > 0`, summed over dyadic shells
/// `[a 2^k, a 2^{k+1}]` until a shell contributes less than `tol`
/// relative to the running total. Suited to algebraically decaying
/// integrands.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(mut f: F, a: f64, tol: Tol) -> Result<f64> {
    if a <= 0.0 {
        return Err(Error::InvalidParameter(format!("shell integration needs a > 0, got {a}")));
    }
    let mut sum = 0.0;
    let mut lo = a;
    let mut small = 0;
    for _ in 0..4000 {
        let hi = 2.0 * lo;
        let s = integrate(&mut f, lo, hi, Tol::new(tol.abs * 1e-2, tol.rel))?;
        sum += s;
        if s.abs() <= tol.bound(sum) * 1e-3 {
            small += 1;
            if small >= 3 {
                return Ok(sum);
            }
        } else {
            small = 0;
        }
        lo = hi;
        if !lo.is_finite() {
            break;
        }
    }
    Err(Error::Quadrature { a, b: f64::INFINITY, value: sum, error: f64::NAN })
}

/// Integral over `(0, b]` of an integrable function that may be singular
/// at zero, summed over shells `[b 2^{-k-1}, b 2^{-k}]`.
pub fn integrate_from_zero<F: FnMut(f64) -> f64>(mut f: F, b: f64, tol: Tol) -> Result<f64> {
    if b <= 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut hi = b;
    let mut small = 0;
    for _ in 0..1000 {
        let lo = 0.5 * hi;
        let s = integrate(&mut f, lo, hi, Tol::new(tol.abs * 1e-2, tol.rel))?;
        sum += s;
        if s.abs() <= tol.bound(sum) * 1e-3 {
            small += 1;
            if small >= 3 {
                return Ok(sum);
            }
        } else {
            small = 0;
        }
        hi = lo;
        if hi < f64::MIN_POSITIVE {
            return Ok(sum);
        }
    }
    Err(Error::Quadrature { a: 0.0, b, value: sum, error: f64::NAN })
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x[0] = 0.0;
            w[0] = 2.0;
            break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Tensor Gauss-Legendre rule on the box `[lo, hi]`.
fn tensor_rule<F: FnMut(&[f64]) -> f64>(f: &mut F, lo: &[f64], hi: &[f64], x: &[f64], w: &[f64]) -> f64 {
    let d = lo.len();
    let n = x.len();
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0; d];
    let mut sum = 0.0;
    loop {
        let mut wt = 1.0;
        for a in 0..d {
            let c = 0.5 * (lo[a] + hi[a]);
            let r = 0.5 * (hi[a] - lo[a]);
            p[a] = c + r * x[idx[a]];
            wt *= r * w[idx[a]];
        }
        sum += wt * f(&p);
        let mut a = 0;
        loop {
            if a == d {
                return sum;
            }
            idx[a] += 1;
            if idx[a] < n {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// Adaptive cubature over an axis-aligned box. Each box is compared
/// against the sum over its 2^d halves; boxes are split recursively down
/// to `max_depth`.
pub fn integrate_box<F: FnMut(&[f64]) -> f64>(mut f: F, lo: &[f64], hi: &[f64], tol: f64, max_depth: usize) -> f64 {
    let (x, w) = gauss_legendre(6);
    let coarse = tensor_rule(&mut f, lo, hi, &x, &w);
    box_recurse(&mut f, lo, hi, coarse, tol, max_depth, &x, &w)
}

#[allow(clippy::too_many_arguments)]
fn box_recurse<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    lo: &[f64],
    hi: &[f64],
    coarse: f64,
    tol: f64,
    depth: usize,
    x: &[f64],
    w: &[f64],
) -> f64 {
    let d = lo.len();
    let nsub = 1usize << d;
    let mut subs = Vec::with_capacity(nsub);
    let mut fine = 0.0;
    for s in 0..nsub {
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
        let v = tensor_rule(f, &l, &h, x, w);
        fine += v;
        subs.push((l, h, v));
    }
    if (fine - coarse).abs() <= tol || depth == 0 {
        return fine;
    }
    let sub_tol = tol / nsub as f64;
    subs.into_iter().map(|(l, h, v)| box_recurse(f, &l, &h, v, sub_tol, depth - 1, x, w)).sum()
}
