//! Derivative-free minimization: Nelder–Mead simplex with restarts, Brent's
//! method for scalar problems, and a bracketing root finder.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the simplex diameter.
    pub tolerance: f64,
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_iterations: 2000, tolerance: 1e-8, restarts: 3 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::invalid("max_iterations must be >= 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("optimizer tolerance must be > 0"));
        }
        if self.restarts < 1 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// False when the last start stopped on the iteration budget.
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn nelder_mead<F>(f: &mut F, x0: &[f64], step: f64, cfg: &OptimizerConfig) -> (Vec<f64>, f64, usize, bool)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let h = if v[i].abs() > 1e-3 { step * v[i].abs().max(1.0) } else { step };
        v[i] += h;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| sanitize(f(v))).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let spread = (values[n] - values[0]).abs();
        if diameter < cfg.tolerance && (spread <= cfg.tolerance * (1.0 + values[0].abs()) || !values[n].is_finite()) {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-alpha);
        let fr = sanitize(f(&xr));
        if fr < values[0] {
            let xe = along(-gamma);
            let fe = sanitize(f(&xe));
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-rho);
                let fc = sanitize(f(&xc));
                (xc, fc)
            } else {
                let xc = along(rho);
                let fc = sanitize(f(&xc));
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    values[i] = sanitize(f(&shrunk));
                    simplex[i] = shrunk;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[best].clone(), values[best], iterations, converged)
}

/// Minimizes `objective` from `x0`.
///
/// The first start uses an initial simplex of relative size 0.1; each
/// restart re-seeds a fresh simplex at the incumbent best point with a
/// halved step, which guards against premature simplex collapse. The best
/// point over all starts is returned. Non-finite objective values are
/// treated as `+∞`.
pub fn minimize<F>(mut objective: F, x0: &[f64], config: &OptimizerConfig) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    if x0.is_empty() {
        return Err(Error::invalid("minimize: empty starting point"));
    }
    let f0 = sanitize(objective(x0));
    let mut best_x = x0.to_vec();
    let mut best_f = f0;
    let mut iterations = 0;
    let mut converged = false;
    let mut step = 0.1;
    for _ in 0..config.restarts {
        let (x, fx, it, conv) = nelder_mead(&mut objective, &best_x, step, config);
        iterations += it;
        converged = conv;
        if fx <= best_f {
            best_x = x;
            best_f = fx;
        }
        step *= 0.5;
    }
    if !best_f.is_finite() {
        return Err(Error::Numerical(
            "minimize: objective non-finite at every probe".into(),
        ));
    }
    Ok(Minimum { argmin: best_x, value: best_f, iterations, converged })
}

/// Brent's method for a scalar function on `[lo, hi]`.
pub fn minimize_scalar<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    if !(lo < hi) {
        return Err(Error::invalid("minimize_scalar: empty bracket"));
    }
    const CGOLD: f64 = 0.381_966_011_250_105;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = sanitize(f(x));
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = sanitize(f(u));
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    if !fx.is_finite() {
        return Err(Error::Numerical("minimize_scalar: non-finite objective".into()));
    }
    Ok((x, fx))
}

/// Finds a root of `f` in `[lo, hi]` by bisection-safeguarded secant steps
/// (Brent–Dekker). `f(lo)` and `f(hi)` must have opposite signs.
pub fn find_root<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Numerical(format!(
            "find_root: no sign change on [{lo}, {hi}]"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
    }
    Err(Error::Convergence { what: "find_root", best: b, error: (c - b).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_1d() {
        let m = minimize(|x| (x[0] - 3.0).powi(2), &[0.0], &OptimizerConfig::default()).unwrap();
        assert!((m.argmin[0] - 3.0).abs() < 1e-6);
        assert!(m.converged);
    }

    #[test]
    fn bowl_2d() {
        let m = minimize(|x| x[0] * x[0] + x[1] * x[1], &[1.0, 1.0], &OptimizerConfig::default())
            .unwrap();
        assert!(m.argmin[0].abs() < 1e-6 && m.argmin[1].abs() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = OptimizerConfig { max_iterations: 5000, ..Default::default() };
        let m = minimize(f, &[-1.2, 1.0], &cfg).unwrap();
        assert!((m.argmin[0] - 1.0).abs() < 1e-5 && (m.argmin[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| (x[0] * 3.1).sin() + 0.1 * x[0] * x[0] + (x[1] - 0.3).abs();
        for start in [[-2.0, 1.0], [0.5, 0.5], [4.0, -3.0]] {
            let m = minimize(f, &start, &OptimizerConfig::default()).unwrap();
            assert!(m.value <= f(&start));
        }
    }

    #[test]
    fn non_finite_everywhere_is_error() {
        let err = minimize(|_| f64::NAN, &[1.0, 2.0], &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn survives_infinite_regions() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 0.2).powi(2) };
        let m = minimize(f, &[1.0], &OptimizerConfig::default()).unwrap();
        assert!((m.argmin[0] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(4) + (x[1] + x[0]).powi(2);
        let a = minimize(f, &[0.3, 0.1], &OptimizerConfig::default()).unwrap();
        let b = minimize(f, &[0.3, 0.1], &OptimizerConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn brent_scalar() {
        let (x, fx) = minimize_scalar(|x| (x - 0.7).powi(2) + 1.0, -3.0, 5.0, 1e-10, 200).unwrap();
        assert!((x - 0.7).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn root() {
        let r = find_root(|x| Ok(x * x * x - 2.0), 0.0, 3.0, 1e-13).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
        assert!(find_root(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-10).is_err());
    }
}
