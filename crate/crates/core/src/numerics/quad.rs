//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Default absolute tolerance for integrals of densities.
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;

const MAX_INTERVALS: usize = 4000;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of a quadrature: the estimate and a (conservative) bound on its
/// absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    // roundoff floor
    let floor = 50.0 * f64::EPSILON * value.abs();
    (value, err.max(floor))
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn adapt_finite(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<Quadrature> {
    let mut heap = BinaryHeap::new();
    let (value, err) = gk15(f, a, b);
    let mut evaluations = 15;
    let mut total = value;
    let mut total_err = err;
    heap.push(Piece { a, b, value, err });
    while total_err > tol {
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Convergence {
                what: "adaptive quadrature",
                best: total,
                error: total_err,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // interval cannot be split further in floating point
            return Err(Error::Convergence {
                what: "adaptive quadrature",
                best: total,
                error: total_err,
            });
        }
        let (v1, e1) = gk15(f, worst.a, mid);
        let (v2, e2) = gk15(f, mid, worst.b);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(Piece { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Piece { a: mid, b: worst.b, value: v2, err: e2 });
        if !total.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
    }
    // recompute the sums to shed accumulated cancellation
    let (value, abs_error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.err));
    Ok(Quadrature { value, abs_error, evaluations })
}

/// Integrates `f` over `(a, b)` to an absolute tolerance `tol`.
///
/// Either bound may be infinite; half-lines are mapped onto `[0, 1)` by
/// `x = a + t/(1-t)` and the whole line onto `(-1, 1)` by `x = t/(1-t²)`.
/// On budget exhaustion the error carries the best estimate.
pub fn adaptive_quad<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<Quadrature>
where
    F: FnMut(f64) -> f64,
{
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("quadrature tolerance must be > 0, got {tol}")));
    }
    if a.is_nan() || b.is_nan() {
        return Err(Error::invalid("quadrature bound is NaN"));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, abs_error: 0.0, evaluations: 0 });
    }
    if a > b {
        let q = adaptive_quad(f, b, a, tol)?;
        return Ok(Quadrature { value: -q.value, ..q });
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adapt_finite(&mut f, a, b, tol),
        (true, false) => {
            let mut g = |t: f64| {
                let s = 1.0 - t;
                f(a + t / s) / (s * s)
            };
            adapt_finite(&mut g, 0.0, 1.0, tol)
        }
        (false, true) => {
            let mut g = |t: f64| {
                let s = 1.0 - t;
                f(b - t / s) / (s * s)
            };
            adapt_finite(&mut g, 0.0, 1.0, tol)
        }
        (false, false) => {
            let mut g = |t: f64| {
                let s = 1.0 - t * t;
                f(t / s) * (1.0 + t * t) / (s * s)
            };
            adapt_finite(&mut g, -1.0, 1.0, tol)
        }
    }
}

/// Integrates over the whole line with the breakpoints placed around a
/// known centre and scale, so narrow peaks are never straddled by the
/// first Kronrod rule.
pub fn integrate_line<F>(mut f: F, center: f64, scale: f64, tol: f64) -> Result<Quadrature>
where
    F: FnMut(f64) -> f64,
{
    integrate_between(&mut f, f64::NEG_INFINITY, f64::INFINITY, center, scale, tol)
}

/// Integrates over `(lo, hi)` (either may be infinite), splitting the range
/// at `center ± {1,4,12}·scale`.
pub fn integrate_between<F>(
    f: &mut F,
    lo: f64,
    hi: f64,
    center: f64,
    scale: f64,
    tol: f64,
) -> Result<Quadrature>
where
    F: FnMut(f64) -> f64,
{
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::invalid(format!("integration scale must be > 0, got {scale}")));
    }
    if lo >= hi {
        return Ok(Quadrature { value: 0.0, abs_error: 0.0, evaluations: 0 });
    }
    let mut cuts = vec![lo];
    for k in [-12.0, -4.0, -1.0, 0.0, 1.0, 4.0, 12.0] {
        let c = center + k * scale;
        if c > lo && c < hi {
            cuts.push(c);
        }
    }
    cuts.push(hi);
    let pieces = (cuts.len() - 1) as f64;
    let mut out = Quadrature { value: 0.0, abs_error: 0.0, evaluations: 0 };
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let q = if a.is_finite() && b.is_finite() {
            adaptive_quad(&mut *f, a, b, tol / pieces)?
        } else if a.is_finite() {
            // scaled half-line transform
            let g = |t: f64| scale * f(a + scale * t);
            adaptive_quad(g, 0.0, f64::INFINITY, tol / pieces)?
        } else {
            let g = |t: f64| scale * f(b - scale * t);
            adaptive_quad(g, 0.0, f64::INFINITY, tol / pieces)?
        };
        out.value += q.value;
        out.abs_error += q.abs_error;
        out.evaluations += q.evaluations;
    }
    Ok(out)
}
