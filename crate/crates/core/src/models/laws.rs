//! Predictive laws of `m_T` given the current `(m, V)`.
//!
//! All four laws are normal variance(-mean) mixtures: the symmetric ones
//! (Student-t, NIG) in the variable itself, the log ones in `log m_T`, with
//! a mean shift of `−Y/2` that makes `m` a martingale.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, StandardNormal};
use rayon::prelude::*;

use super::{ForecastState, ModelFamily, ModelParams, NigCanonical};
use crate::error::{Error, Result};
use crate::numerics::{integrate_between, log_bessel_k, log_bessel_k_scaled, log_gamma};
use crate::rng;

const SAMPLE_CHUNK: usize = 4096;

/// `ν = 1 + 2/b²`, the mixing shape of the Student-t and log-GH laws.
fn nu(b: f64) -> f64 {
    1.0 + 2.0 / (b * b)
}

/// Canonical NIG parameters of the predictive law (`Nig`) or of the law of
/// `log m_T` (`LogNig`). `v` is the uncertainty factor.
pub fn canonical_nig_params(family: ModelFamily, m: f64, v: f64, b: f64) -> Result<NigCanonical> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::domain(format!("shape b must be > 0, got {b}")));
    }
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::domain(format!("uncertainty factor must be >= 0, got {v}")));
    }
    match family {
        ModelFamily::Nig => Ok(NigCanonical {
            alpha: 1.0 / b,
            beta: 0.0,
            gamma: 1.0 / b,
            delta: v / b,
            mu: m,
        }),
        ModelFamily::LogNig => {
            if !(m > 0.0) {
                return Err(Error::domain(format!("log-NIG needs m > 0, got {m}")));
            }
            let gamma = 1.0 / b + 0.5 * b;
            Ok(NigCanonical {
                alpha: (gamma * gamma + 0.25).sqrt(),
                beta: -0.5,
                gamma,
                delta: v / b,
                mu: m.ln(),
            })
        }
        other => Err(Error::invalid(format!("{other} has no NIG parameterization"))),
    }
}

/// Maps a predictive variance to the uncertainty factor: identity for the
/// real-valued families, `log(σ²/m² + 1)` for the positive ones.
pub fn v_from_sigma2(family: ModelFamily, m: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::domain(format!("variance must be >= 0, got {sigma2}")));
    }
    if family.is_positive() {
        if !(m > 0.0) {
            return Err(Error::domain(format!("{family} needs m > 0, got {m}")));
        }
        Ok((sigma2 / (m * m)).ln_1p())
    } else {
        Ok(sigma2)
    }
}

/// Log-density of a NIG law.
pub fn nig_log_pdf(c: &NigCanonical, y: f64) -> f64 {
    let z = y - c.mu;
    let r = c.delta.hypot(z);
    if !(r > 0.0) {
        return f64::NEG_INFINITY;
    }
    // e^{αr}K₁(αr), so that the exponent can be combined exactly below
    let Ok(lk_scaled) = log_bessel_k_scaled(1.0, c.alpha * r) else {
        return f64::NEG_INFINITY;
    };
    // δγ − αr = α(δ − r) + δ(γ − α), both differences formed without
    // cancellation; they are huge and opposite when the tails are light
    let exponent = -c.alpha * z * z / (c.delta + r) - c.delta * c.beta * c.beta / (c.gamma + c.alpha);
    c.alpha.ln() + c.delta.ln() - PI.ln() + lk_scaled - r.ln() + exponent + c.beta * z
}

/// NIG characteristic function `exp(iμu + δ(γ − √(α² − (β+iu)²)))`.
pub fn char_fn(c: &NigCanonical, u: f64) -> Complex64 {
    char_exponent(c, u).exp()
}

/// The exponent of [`char_fn`], with `γ − √w` rewritten as
/// `(γ² − w)/(γ + √w)` so that small `u` does not cancel.
pub(crate) fn char_exponent(c: &NigCanonical, u: f64) -> Complex64 {
    let bu = Complex64::new(c.beta, u);
    let w = Complex64::new(c.alpha * c.alpha, 0.0) - bu * bu;
    let sw = w.sqrt();
    // γ² − w = (β + iu)² − β² = 2iβu − u²
    let num = Complex64::new(-u * u, 2.0 * c.beta * u);
    Complex64::new(0.0, c.mu * u) + c.delta * num / (c.gamma + sw)
}

/// Log-density of the law of the working variable: `m_T` itself for the
/// real-valued families, `log m_T` for the positive ones. Requires `v > 0`.
pub(crate) fn log_density_working(family: ModelFamily, b: f64, m: f64, v: f64, y: f64) -> Result<f64> {
    match family {
        ModelFamily::Nig | ModelFamily::LogNig => {
            let c = canonical_nig_params(family, m, v, b)?;
            Ok(nig_log_pdf(&c, y))
        }
        ModelFamily::StudentT => {
            let n = nu(b);
            let z = y - m;
            Ok(log_gamma(n + 0.5)? - log_gamma(n)? + b.ln() - 2f64.ln() - 0.5 * (PI * v).ln()
                - (n + 0.5) * (z * z * b * b / (4.0 * v)).ln_1p())
        }
        ModelFamily::LogGh => {
            let n = nu(b);
            let z = y - m.ln();
            let order = n + 0.5;
            let arg = (v / (b * b) + 0.25 * z * z).sqrt();
            Ok(b.ln() - 0.5 * z - log_gamma(n)? - 0.5 * (PI * v).ln()
                + order * (v.ln() - b.ln() - 0.5 * (4.0 * v + z * z * b * b).ln())
                + log_bessel_k(order, arg)?)
        }
    }
}

fn check_density_args(params: &ModelParams, state: &ForecastState) -> Result<()> {
    params.validate()?;
    state.check(params.family)?;
    if state.v == 0.0 {
        return Err(Error::domain(
            "V = 0 gives a point mass at m; there is no density",
        ));
    }
    Ok(())
}

/// Log of the predictive density of `m_T` at `x` (with the `1/x` Jacobian
/// for the positive families). Outside the support this is `-∞`.
pub fn log_density(params: &ModelParams, state: &ForecastState, x: f64) -> Result<f64> {
    check_density_args(params, state)?;
    if params.family.is_positive() {
        if !(x > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let y = x.ln();
        Ok(log_density_working(params.family, params.b, state.m, state.v, y)? - y)
    } else {
        log_density_working(params.family, params.b, state.m, state.v, x)
    }
}

pub fn predictive_density(params: &ModelParams, state: &ForecastState, x: f64) -> Result<f64> {
    Ok(log_density(params, state, x)?.exp())
}

/// Predictive CDF of `m_T` at `x` by quadrature of the density, computed
/// from whichever tail is closer so that tail probabilities keep their
/// relative accuracy. `V = 0` gives the step function at `m`.
pub fn predictive_cdf(params: &ModelParams, state: &ForecastState, x: f64, tol: f64) -> Result<f64> {
    params.validate()?;
    state.check(params.family)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("CDF tolerance must be > 0"));
    }
    if state.v == 0.0 {
        return Ok(if x >= state.m { 1.0 } else { 0.0 });
    }
    let (y, center) = if params.family.is_positive() {
        if !(x > 0.0) {
            return Ok(0.0);
        }
        (x.ln(), state.m.ln())
    } else {
        (x, state.m)
    };
    working_cdf(params.family, params.b, state.m, state.v, center, y, tol)
}

pub(crate) fn working_cdf(
    family: ModelFamily,
    b: f64,
    m: f64,
    v: f64,
    center: f64,
    y: f64,
    tol: f64,
) -> Result<f64> {
    let scale = v.sqrt();
    let mut pdf = |s: f64| match log_density_working(family, b, m, v, s) {
        Ok(l) => l.exp(),
        Err(_) => 0.0,
    };
    if y == f64::INFINITY {
        return Ok(1.0);
    }
    if y == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let p = if y <= center {
        integrate_between(&mut pdf, f64::NEG_INFINITY, y, center, scale, tol)?.value
    } else {
        1.0 - integrate_between(&mut pdf, y, f64::INFINITY, center, scale, tol)?.value
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Mean and variance of `m_T` given the state. The log-GH law has no second
/// moment; its variance is reported as `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl Moments {
    pub fn has_finite_variance(&self) -> bool {
        self.variance.is_finite()
    }
}

pub fn predictive_moments(params: &ModelParams, state: &ForecastState) -> Result<Moments> {
    state.check(params.family)?;
    let variance = match params.family {
        ModelFamily::StudentT | ModelFamily::Nig => state.v,
        ModelFamily::LogNig => state.m * state.m * state.v.exp_m1(),
        ModelFamily::LogGh => {
            if state.v == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
    };
    Ok(Moments { mean: state.m, variance })
}

/// One exact draw of `m_T` given `(m, V)`.
pub fn draw_terminal<R: Rng + ?Sized>(family: ModelFamily, b: f64, m: f64, v: f64, rng: &mut R) -> f64 {
    if v <= 0.0 {
        return m;
    }
    let z: f64 = StandardNormal.sample(rng);
    draw_terminal_given_normal(family, b, m, v, z, rng)
}

/// [`draw_terminal`] with the Gaussian factor of the variance mixture
/// supplied, so it can be correlated with other noise.
pub(crate) fn draw_terminal_given_normal<R: Rng + ?Sized>(family: ModelFamily, b: f64, m: f64, v: f64, z: f64, rng: &mut R) -> f64 {
    if v <= 0.0 {
        return m;
    }
    match family {
        ModelFamily::Nig => {
            let y = InverseGaussian::new(v, v * v / (b * b)).expect("valid IG").sample(rng);
            m + y.sqrt() * z
        }
        ModelFamily::LogNig => {
            let c = canonical_nig_params(family, m, v, b).expect("validated state");
            let y = InverseGaussian::new(c.delta / c.gamma, c.delta * c.delta)
                .expect("valid IG")
                .sample(rng);
            (c.mu + c.beta * y + y.sqrt() * z).exp()
        }
        ModelFamily::StudentT => {
            let g: f64 = Gamma::new(nu(b), 1.0).expect("valid gamma").sample(rng);
            m + (2.0 * v / (b * b * g)).sqrt() * z
        }
        ModelFamily::LogGh => {
            let g: f64 = Gamma::new(nu(b), 1.0).expect("valid gamma").sample(rng);
            let y = 2.0 * v / (b * b * g);
            m * (y.sqrt() * z - 0.5 * y).exp()
        }
    }
}

/// `n` exact draws of `m_T` given the state, reproducible from `seed`
/// independently of the thread count.
pub fn sample_terminal(params: &ModelParams, state: &ForecastState, n: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    state.check(params.family)?;
    let mut out = vec![0.0; n];
    let (family, b, m, v) = (params.family, params.b, state.m, state.v);
    out.par_chunks_mut(SAMPLE_CHUNK).enumerate().for_each(|(k, chunk)| {
        let mut r = rng::stream(seed, k as u64);
        for x in chunk {
            *x = draw_terminal(family, b, m, v, &mut r);
        }
    });
    Ok(out)
}
