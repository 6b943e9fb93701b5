//! EMOS-style calibration of the forecast models from ensembles.
//!
//! Step 1 fits, per horizon, the mean map by least squares and the variance
//! map and shape by maximum likelihood; step 2 refits one shape shared by
//! all horizons; step 3 estimates `ρ` on each lead-time interval from pairs
//! of forecasts for the same valid time.

mod synthetic;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, EnsembleRecord};
use crate::error::{Error, Result};
use crate::models::{self, ModelFamily, RhoSchedule};
use crate::numerics::{minimize, minimize_scalar, ols_fit, OptimizerConfig};
use crate::rng;

pub use synthetic::{
    generate_synthetic, recovery_report, InitialLaw, LowVariance, RecoveryRow, SyntheticConfig, SyntheticData, Tolerance,
};

/// Floor applied to a non-positive `ρ̂²`.
pub const RHO2_FLOOR: f64 = 1e-6;

const LIKELIHOOD_CHUNK: usize = 1024;

/// Population mean and variance of the members.
pub fn ensemble_stats(members: &[f64]) -> Result<(f64, f64)> {
    if members.len() < 2 {
        return Err(Error::invalid(format!(
            "ensemble statistics need at least 2 members, got {}",
            members.len()
        )));
    }
    let n = members.len() as f64;
    let mean = members.iter().sum::<f64>() / n;
    let spread = members.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, spread))
}

/// Scale on which the mean map is regressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanScale {
    /// `m = a⁰ + a¹·x̄`.
    #[default]
    Linear,
    /// `log m = a⁰ + a¹·mean(log xᵐ)`, regressed against `log x̃`; the
    /// spread is still taken on the original scale.
    Log,
}

impl std::str::FromStr for MeanScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MeanScale::Linear),
            "log" => Ok(MeanScale::Log),
            other => Err(Error::invalid(format!("unknown mean scale '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonCoefficients {
    pub horizon_h: u32,
    pub a0: f64,
    pub a1: f64,
    pub c: f64,
    pub d: f64,
    pub b: f64,
}

/// `(m, σ²) = (a⁰ + a¹·mean, c + d·spread)`.
pub fn emos_predictive(coeffs: &HorizonCoefficients, mean: f64, spread: f64) -> (f64, f64) {
    (coeffs.a0 + coeffs.a1 * mean, coeffs.c + coeffs.d * spread)
}

/// Per-record regressors of one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSample {
    pub horizon_h: u32,
    /// Regressor of the mean map (ensemble mean, or mean of logs).
    pub x: Vec<f64>,
    pub spread: Vec<f64>,
    /// Realizations on the original scale.
    pub y: Vec<f64>,
}

impl HorizonSample {
    pub fn from_records(horizon_h: u32, records: &[EnsembleRecord], scale: MeanScale) -> Result<Self> {
        let mut s = HorizonSample { horizon_h, x: Vec::new(), spread: Vec::new(), y: Vec::new() };
        for r in records {
            let y = r.realization.ok_or_else(|| {
                Error::invalid(format!("record at {}h has no realization", r.horizon_h))
            })?;
            let (mean, spread) = ensemble_stats(&r.members)?;
            let x = match scale {
                MeanScale::Linear => mean,
                MeanScale::Log => {
                    if r.members.iter().any(|&v| !(v > 0.0)) || !(y > 0.0) {
                        return Err(Error::invalid("log mean scale needs positive members and realizations"));
                    }
                    r.members.iter().map(|v| v.ln()).sum::<f64>() / r.members.len() as f64
                }
            };
            s.x.push(x);
            s.spread.push(spread);
            s.y.push(y);
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Predictive means under the mean map.
    pub fn means(&self, a0: f64, a1: f64, scale: MeanScale) -> Vec<f64> {
        self.x
            .iter()
            .map(|&x| match scale {
                MeanScale::Linear => a0 + a1 * x,
                MeanScale::Log => (a0 + a1 * x).exp(),
            })
            .collect()
    }
}

/// Step 1a: least-squares mean map.
pub fn fit_mean_coeffs(sample: &HorizonSample, scale: MeanScale) -> Result<(f64, f64)> {
    match scale {
        MeanScale::Linear => ols_fit(&sample.x, &sample.y),
        MeanScale::Log => {
            let ly: Vec<f64> = sample.y.iter().map(|y| y.ln()).collect();
            ols_fit(&sample.x, &ly)
        }
    }
}

/// Log predictive density of the realization `y` for predictive mean `m`,
/// variance `sigma2` and shape `b`.
pub fn record_log_likelihood(family: ModelFamily, m: f64, sigma2: f64, b: f64, y: f64) -> f64 {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return f64::NEG_INFINITY;
    }
    match family {
        ModelFamily::Nig => {
            let c = models::NigCanonical { alpha: 1.0 / b, beta: 0.0, gamma: 1.0 / b, delta: sigma2 / b, mu: m };
            models::nig_log_pdf(&c, y)
        }
        _ => {
            let Ok(v) = models::v_from_sigma2(family, m, sigma2) else {
                return f64::NEG_INFINITY;
            };
            if !(v > 0.0) {
                return f64::NEG_INFINITY;
            }
            let params = models::ModelParams { family, b, rho: RhoSchedule::constant(1.0), delivery: 1.0 };
            let state = models::ForecastState::new(0.0, m, v);
            models::log_density(&params, &state, y).unwrap_or(f64::NEG_INFINITY)
        }
    }
}

/// `Σ log p(yᵢ; mᵢ, c + d·spreadᵢ, b)` with a reduction order that does not
/// depend on the thread count.
pub fn log_likelihood(family: ModelFamily, means: &[f64], sample: &HorizonSample, c: f64, d: f64, b: f64) -> f64 {
    let idx: Vec<usize> = (0..sample.len()).collect();
    let partial: Vec<f64> = idx
        .par_chunks(LIKELIHOOD_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| record_log_likelihood(family, means[i], c + d * sample.spread[i], b, sample.y[i]))
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

pub(crate) fn check_family(family: ModelFamily) -> Result<()> {
    if family == ModelFamily::LogGh {
        return Err(Error::invalid(
            "log-GH has no finite variance; it cannot be calibrated from ensemble spread",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit {
    pub c: f64,
    pub d: f64,
    pub b: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Default starting shape per family.
pub fn default_b_init(family: ModelFamily) -> f64 {
    if family.is_positive() {
        0.1
    } else {
        0.7
    }
}

/// Step 1b: maximum likelihood for `(c, d, b)` with the mean map frozen.
///
/// Positivity comes from optimizing `(log c, log d, log b)`. Starts: `(c, d)`
/// from regressing squared residuals on spread with `b = b_init`, plus two
/// seeded random perturbations of it; the best of all starts is kept.
pub fn fit_variance_shape(
    sample: &HorizonSample,
    means: &[f64],
    family: ModelFamily,
    b_init: f64,
    optimizer: &OptimizerConfig,
    seed: u64,
) -> Result<VarianceFit> {
    check_family(family)?;
    if sample.len() < 3 {
        return Err(Error::invalid(format!("horizon {}h has too few records", sample.horizon_h)));
    }
    let r2: Vec<f64> = sample.y.iter().zip(means).map(|(y, m)| (y - m).powi(2)).collect();
    let mean_r2 = r2.iter().sum::<f64>() / r2.len() as f64;
    let (c0, d0) = match ols_fit(&sample.spread, &r2) {
        Ok((c, d)) => (c.max(0.05 * mean_r2), d.max(0.05)),
        Err(_) => (mean_r2, 1.0),
    };
    let nll = |p: &[f64]| -> f64 {
        let (c, d, b) = (p[0].exp(), p[1].exp(), p[2].exp());
        let ll = log_likelihood(family, means, sample, c, d, b);
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let base = [c0.ln(), d0.ln(), b_init.ln()];
    let mut starts = vec![base.to_vec()];
    let mut r = rng::stream(seed, sample.horizon_h as u64);
    for _ in 0..2 {
        starts.push(
            base.iter()
                .map(|&x| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    x + 0.5 * z
                })
                .collect(),
        );
    }
    let mut best: Option<crate::numerics::Minimum> = None;
    let mut iterations = 0;
    for s in &starts {
        let res = match minimize(nll, s, optimizer) {
            Ok(r) => r,
            Err(e) if e.is_numerical() => continue,
            Err(e) => return Err(e),
        };
        iterations += res.iterations;
        if best.as_ref().is_none_or(|b| res.value < b.value) {
            best = Some(res);
        }
    }
    let best = best.ok_or_else(|| {
        Error::Numerical(format!(
            "variance/shape fit at {}h: likelihood non-finite from every start",
            sample.horizon_h
        ))
    })?;
    Ok(VarianceFit {
        c: best.argmin[0].exp(),
        d: best.argmin[1].exp(),
        b: best.argmin[2].exp(),
        loglik: -best.value,
        iterations,
        converged: best.converged,
    })
}

/// Pooled log-likelihood over horizons at shape `b`.
pub fn pooled_log_likelihood(
    family: ModelFamily,
    samples: &[HorizonSample],
    means: &[Vec<f64>],
    coeffs: &[HorizonCoefficients],
    b: f64,
) -> f64 {
    samples
        .iter()
        .zip(means)
        .zip(coeffs)
        .map(|((s, m), k)| log_likelihood(family, m, s, k.c, k.d, b))
        .sum()
}

/// Step 2: one shape for all horizons, by 1-d maximum likelihood with the
/// other coefficients frozen. A log-spaced scan brackets the optimum and
/// Brent's method polishes it.
pub fn fit_shared_shape(
    family: ModelFamily,
    samples: &[HorizonSample],
    means: &[Vec<f64>],
    coeffs: &[HorizonCoefficients],
) -> Result<(f64, f64)> {
    check_family(family)?;
    if samples.is_empty() || samples.len() != coeffs.len() || samples.len() != means.len() {
        return Err(Error::invalid("shared shape fit needs one coefficient set per horizon"));
    }
    let lo = coeffs.iter().map(|k| k.b).fold(f64::INFINITY, f64::min).ln() - 1.0;
    let hi = coeffs.iter().map(|k| k.b).fold(f64::NEG_INFINITY, f64::max).ln() + 1.0;
    let nll = |lb: f64| -> f64 {
        let ll = pooled_log_likelihood(family, samples, means, coeffs, lb.exp());
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    const SCAN: usize = 24;
    let grid: Vec<f64> = (0..=SCAN).map(|i| lo + (hi - lo) * i as f64 / SCAN as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&g| nll(g)).collect();
    let k = (0..=SCAN).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    if !vals[k].is_finite() {
        return Err(Error::Numerical("pooled likelihood non-finite over the whole shape scan".into()));
    }
    let a = grid[k.saturating_sub(1)];
    let b = grid[(k + 1).min(SCAN)];
    let (lb, f) = minimize_scalar(nll, a, b, 1e-10, 200)?;
    let (lb, f) = if f <= vals[k] { (lb, f) } else { (grid[k], vals[k]) };
    Ok((lb.exp(), -f))
}

/// How the wind log-ratio estimator averages over pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoAveraging {
    /// Mean of `log(m_later/m_earlier)/V_earlier` over pairs.
    #[default]
    PerRecord,
    /// `Σ log(m_later/m_earlier) / Σ V_earlier`: the same identity with the
    /// normalization pooled, which is far less noisy when some `V` are small.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    pub schedule: RhoSchedule,
    /// Number of forecast pairs per interval.
    pub pairs: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Step 3: `ρ` on each interval between consecutive horizons.
///
/// Variance-ratio families (Student-t, NIG) use
/// `ρ̂² = −log(mean σ²_later/σ²_earlier)/Δh`, "later" being the forecast
/// issued closer to the valid time (the shorter horizon). The log-NIG family
/// uses the drift of `log m`:
/// `ρ̂² = −(2/(2+b²)) log(1 + (2+b²)·E[log(m_later/m_earlier)/V_earlier])/Δh`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_rho(
    dataset: &Dataset,
    coeffs: &[HorizonCoefficients],
    family: ModelFamily,
    shared_b: f64,
    scale: MeanScale,
    averaging: RhoAveraging,
) -> Result<RhoEstimate> {
    check_family(family)?;
    let horizons: Vec<u32> = coeffs.iter().map(|c| c.horizon_h).collect();
    if horizons.len() < 2 {
        return Err(Error::invalid("estimating rho needs at least two horizons"));
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("coefficients must be sorted by horizon"));
    }
    let predictive = |k: &HorizonCoefficients, r: &EnsembleRecord| -> Result<(f64, f64)> {
        let (mean, spread) = ensemble_stats(&r.members)?;
        let x = match scale {
            MeanScale::Linear => mean,
            MeanScale::Log => r.members.iter().map(|v| v.ln()).sum::<f64>() / r.members.len() as f64,
        };
        let m = match scale {
            MeanScale::Linear => k.a0 + k.a1 * x,
            MeanScale::Log => (k.a0 + k.a1 * x).exp(),
        };
        Ok((m, k.c + k.d * spread))
    };
    let mut values = Vec::new();
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for w in coeffs.windows(2) {
        let (later, earlier) = (&w[0], &w[1]);
        let dh = (earlier.horizon_h - later.horizon_h) as f64;
        let idx_later = dataset.index_by_valid_time(later.horizon_h);
        let mut keyed: Vec<_> = dataset
            .records(earlier.horizon_h)
            .iter()
            .filter_map(|r| idx_later.get(&(r.valid_time(), r.location.as_str())).map(|l| (r, *l)))
            .collect();
        keyed.sort_by(|a, b| (a.0.valid_time(), &a.0.location).cmp(&(b.0.valid_time(), &b.0.location)));
        if keyed.is_empty() {
            return Err(Error::invalid(format!(
                "no forecast pairs for the interval {}h-{}h",
                later.horizon_h, earlier.horizon_h
            )));
        }
        let interval = format!("{}h-{}h", later.horizon_h, earlier.horizon_h);
        let rho2 = if family.has_sqrt_variance() && family.is_positive() {
            let (mut num, mut den, mut mean_ratio) = (0.0, 0.0, 0.0);
            for (e, l) in &keyed {
                let (me, s2e) = predictive(earlier, e)?;
                let (ml, _) = predictive(later, l)?;
                if !(me > 0.0 && ml > 0.0 && s2e > 0.0) {
                    return Err(Error::invalid(format!("non-positive mean or variance in interval {interval}")));
                }
                let ve = models::v_from_sigma2(family, me, s2e)?;
                let lr = (ml / me).ln();
                num += lr;
                den += ve;
                mean_ratio += lr / ve;
            }
            let g = match averaging {
                RhoAveraging::PerRecord => mean_ratio / keyed.len() as f64,
                RhoAveraging::Pooled => num / den,
            };
            let k = 2.0 + shared_b * shared_b;
            let arg = 1.0 + k * g;
            if !(arg > 0.0) {
                return Err(Error::Numerical(format!(
                    "log argument {arg} <= 0 in the rho estimator for interval {interval}"
                )));
            }
            -(2.0 / k) * arg.ln() / dh
        } else {
            let mut sum = 0.0;
            for (e, l) in &keyed {
                let (_, s2e) = predictive(earlier, e)?;
                let (_, s2l) = predictive(later, l)?;
                if !(s2e > 0.0) {
                    return Err(Error::invalid(format!("non-positive variance in interval {interval}")));
                }
                sum += s2l / s2e;
            }
            let mean = sum / keyed.len() as f64;
            if !(mean > 0.0) {
                return Err(Error::Numerical(format!(
                    "log argument {mean} <= 0 in the rho estimator for interval {interval}"
                )));
            }
            -mean.ln() / dh
        };
        let rho2 = if rho2 > RHO2_FLOOR {
            rho2
        } else {
            let msg = format!("rho^2 estimate {rho2:.3e} for interval {interval} clamped to {RHO2_FLOOR:e}");
            log::warn!("{msg}");
            warnings.push(msg);
            RHO2_FLOOR
        };
        values.push(rho2.sqrt());
        pairs.push(keyed.len());
    }
    let schedule = RhoSchedule::new(horizons.iter().map(|&h| h as f64).collect(), values)?;
    Ok(RhoEstimate { schedule, pairs, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub family: ModelFamily,
    #[serde(default)]
    pub mean_scale: MeanScale,
    #[serde(default)]
    pub rho_averaging: RhoAveraging,
    /// Horizons that must be present (hours).
    pub horizons: Vec<u32>,
    pub b_init: Option<f64>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub restarts: usize,
}

fn default_optimizer() -> OptimizerSettings {
    let d = OptimizerConfig::default();
    OptimizerSettings { max_iterations: d.max_iterations, tolerance: d.tolerance, restarts: d.restarts }
}

impl From<OptimizerSettings> for OptimizerConfig {
    fn from(s: OptimizerSettings) -> Self {
        OptimizerConfig { max_iterations: s.max_iterations, tolerance: s.tolerance, restarts: s.restarts }
    }
}

impl CalibrationConfig {
    pub fn new(family: ModelFamily) -> Self {
        CalibrationConfig {
            family,
            mean_scale: MeanScale::Linear,
            rho_averaging: RhoAveraging::PerRecord,
            horizons: vec![12, 24, 36, 48],
            b_init: None,
            optimizer: default_optimizer(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonDiagnostics {
    pub horizon_h: u32,
    pub n_records: usize,
    pub loglik_step1: f64,
    pub loglik_shared: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub per_horizon: Vec<HorizonDiagnostics>,
    pub pooled_loglik: f64,
    pub rho_pairs: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Output of the three steps. `per_horizon[..].b` holds the step-1 shapes;
/// downstream consumers use `shared_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub family: ModelFamily,
    pub mean_scale: MeanScale,
    pub shared_b: f64,
    pub rho: RhoSchedule,
    pub per_horizon: Vec<HorizonCoefficients>,
    pub diagnostics: Diagnostics,
}

impl CalibrationResult {
    /// Coefficients for `horizon` with the shared shape substituted.
    pub fn coefficients(&self, horizon: u32) -> Option<HorizonCoefficients> {
        self.per_horizon
            .iter()
            .find(|k| k.horizon_h == horizon)
            .map(|k| HorizonCoefficients { b: self.shared_b, ..*k })
    }

    /// Predictive `(m, σ²)` for one ensemble.
    pub fn predictive(&self, horizon: u32, members: &[f64]) -> Result<(f64, f64)> {
        let k = self
            .coefficients(horizon)
            .ok_or_else(|| Error::invalid(format!("no coefficients for horizon {horizon}h")))?;
        let (mean, spread) = ensemble_stats(members)?;
        let m = match self.mean_scale {
            MeanScale::Linear => k.a0 + k.a1 * mean,
            MeanScale::Log => {
                let lm = members.iter().map(|v| v.ln()).sum::<f64>() / members.len() as f64;
                (k.a0 + k.a1 * lm).exp()
            }
        };
        if self.family.is_positive() && !(m > 0.0) {
            return Err(Error::domain(format!("predictive mean {m} <= 0 for a positive family")));
        }
        Ok((m, k.c + k.d * spread))
    }

    /// Predictive state `(m, V)` for one ensemble.
    pub fn state(&self, horizon: u32, members: &[f64]) -> Result<models::ForecastState> {
        let (m, s2) = self.predictive(horizon, members)?;
        let v = models::v_from_sigma2(self.family, m, s2)?;
        Ok(models::ForecastState::new(0.0, m, v))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize calibration: {e}")))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let r: CalibrationResult =
            toml::from_str(s).map_err(|e| Error::invalid(format!("bad calibration file: {e}")))?;
        r.rho.validate()?;
        Ok(r)
    }
}

/// Runs steps 1–3 on a joined dataset.
pub fn calibrate(dataset: &Dataset, config: &CalibrationConfig) -> Result<CalibrationResult> {
    check_family(config.family)?;
    let mut horizons = config.horizons.clone();
    horizons.sort_unstable();
    horizons.dedup();
    if horizons.len() < 2 {
        return Err(Error::invalid("calibration needs at least two horizons"));
    }
    for &h in &horizons {
        if dataset.records(h).is_empty() {
            return Err(Error::invalid(format!("horizon {h}h is missing from the data")));
        }
    }
    let optimizer: OptimizerConfig = config.optimizer.into();
    optimizer.validate()?;
    let b_init = config.b_init.unwrap_or_else(|| default_b_init(config.family));

    let mut samples = Vec::new();
    let mut means = Vec::new();
    let mut coeffs = Vec::new();
    let mut fits = Vec::new();
    for &h in &horizons {
        let s = HorizonSample::from_records(h, dataset.records(h), config.mean_scale)?;
        let (a0, a1) = fit_mean_coeffs(&s, config.mean_scale)?;
        let m = s.means(a0, a1, config.mean_scale);
        if config.family.is_positive() && m.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::domain(format!(
                "mean map at {h}h produces non-positive means for a positive family"
            )));
        }
        let fit = fit_variance_shape(&s, &m, config.family, b_init, &optimizer, config.seed)?;
        log::info!("{h}h: a0={a0:.4} a1={a1:.4} c={:.4} d={:.4} b={:.4}", fit.c, fit.d, fit.b);
        coeffs.push(HorizonCoefficients { horizon_h: h, a0, a1, c: fit.c, d: fit.d, b: fit.b });
        samples.push(s);
        means.push(m);
        fits.push(fit);
    }
    let (shared_b, pooled) = fit_shared_shape(config.family, &samples, &means, &coeffs)?;
    let est = estimate_rho(dataset, &coeffs, config.family, shared_b, config.mean_scale, config.rho_averaging)?;
    let per_horizon_diag = samples
        .iter()
        .zip(&means)
        .zip(&coeffs)
        .zip(&fits)
        .map(|(((s, m), k), f)| HorizonDiagnostics {
            horizon_h: k.horizon_h,
            n_records: s.len(),
            loglik_step1: f.loglik,
            loglik_shared: log_likelihood(config.family, m, s, k.c, k.d, shared_b),
            iterations: f.iterations,
            converged: f.converged,
        })
        .collect();
    Ok(CalibrationResult {
        family: config.family,
        mean_scale: config.mean_scale,
        shared_b,
        rho: est.schedule,
        per_horizon: coeffs,
        diagnostics: Diagnostics {
            per_horizon: per_horizon_diag,
            pooled_loglik: pooled,
            rho_pairs: est.pairs,
            warnings: est.warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{parse_time, Variable};
    use approx::assert_relative_eq;

    fn small_temperature(seed: u64) -> SyntheticConfig {
        let mut cfg = SyntheticConfig::temperature_reference();
        cfg.n_dates = 20;
        cfg.n_locations = 40;
        cfg.members = 10;
        cfg.substeps_per_hour = 2;
        cfg.seed = seed;
        cfg
    }

    #[test]
    fn ensemble_stats_population_variance() {
        let (m, s) = ensemble_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(s, 1.25);
        assert!(ensemble_stats(&[1.0]).is_err());
    }

    #[test]
    fn mean_map_is_closed_form_ols() {
        let data = generate_synthetic(&small_temperature(3)).unwrap().dataset;
        let s = HorizonSample::from_records(24, data.records(24), MeanScale::Linear).unwrap();
        let (a0, a1) = fit_mean_coeffs(&s, MeanScale::Linear).unwrap();
        let n = s.len() as f64;
        let (sx, sy) = (s.x.iter().sum::<f64>(), s.y.iter().sum::<f64>());
        let sxx: f64 = s.x.iter().map(|x| x * x).sum();
        let sxy: f64 = s.x.iter().zip(&s.y).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        assert_relative_eq!(a1, slope, epsilon = 1e-10, max_relative = 1e-10);
        assert_relative_eq!(a0, intercept, epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn nig_record_likelihood_matches_density() {
        let params = models::ModelParams::new(ModelFamily::Nig, 0.7, RhoSchedule::constant(0.16), 48.0).unwrap();
        let state = models::ForecastState::new(0.0, 1.5, 2.0);
        let direct = models::log_density(&params, &state, 0.3).unwrap();
        assert_relative_eq!(record_log_likelihood(ModelFamily::Nig, 1.5, 2.0, 0.7, 0.3), direct, epsilon = 1e-12);
        assert_eq!(record_log_likelihood(ModelFamily::Nig, 1.5, 0.0, 0.7, 0.3), f64::NEG_INFINITY);
    }

    #[test]
    fn shared_shape_beats_every_per_horizon_shape() {
        let data = generate_synthetic(&small_temperature(5)).unwrap().dataset;
        let mut cfg = CalibrationConfig::new(ModelFamily::Nig);
        cfg.optimizer.restarts = 1;
        let res = calibrate(&data, &cfg).unwrap();
        let samples: Vec<_> = res
            .per_horizon
            .iter()
            .map(|k| HorizonSample::from_records(k.horizon_h, data.records(k.horizon_h), MeanScale::Linear).unwrap())
            .collect();
        let means: Vec<_> = samples.iter().zip(&res.per_horizon).map(|(s, k)| s.means(k.a0, k.a1, MeanScale::Linear)).collect();
        let shared = pooled_log_likelihood(ModelFamily::Nig, &samples, &means, &res.per_horizon, res.shared_b);
        assert_relative_eq!(shared, res.diagnostics.pooled_loglik, max_relative = 1e-12);
        for k in &res.per_horizon {
            let single = pooled_log_likelihood(ModelFamily::Nig, &samples, &means, &res.per_horizon, k.b);
            assert!(shared >= single - 1e-9, "shared {shared} < {single} at b = {}", k.b);
        }
    }

    #[test]
    fn variance_ratio_rho_recovered_with_true_coefficients() {
        let mut cfg = SyntheticConfig::temperature_reference();
        cfg.rho = RhoSchedule::new(vec![12.0, 24.0, 36.0, 48.0], vec![0.16; 3]).unwrap();
        cfg.n_locations = 100;
        cfg.substeps_per_hour = 4;
        let data = generate_synthetic(&cfg).unwrap().dataset;
        let est = estimate_rho(&data, &cfg.coefficients, cfg.family, cfg.b, MeanScale::Linear, RhoAveraging::PerRecord)
            .unwrap();
        for &r in &est.schedule.values {
            assert!((r / 0.16 - 1.0).abs() < 0.15, "rho {r}");
        }
        assert!(est.warnings.is_empty());
        assert_eq!(est.pairs.len(), 3);
    }

    #[test]
    fn log_ratio_rho_recovered_with_true_coefficients() {
        let cfg = SyntheticConfig::wind_reference();
        let data = generate_synthetic(&cfg).unwrap().dataset;
        let est = estimate_rho(&data, &cfg.coefficients, cfg.family, cfg.b, MeanScale::Linear, RhoAveraging::Pooled)
            .unwrap();
        for (r, t) in est.schedule.values.iter().zip(&cfg.rho.values) {
            assert!((r / t - 1.0).abs() < 0.15, "rho {r} vs {t}");
        }
    }

    fn record(issue: &str, h: u32, members: Vec<f64>, y: f64) -> EnsembleRecord {
        EnsembleRecord {
            issue_time: parse_time(issue).unwrap(),
            horizon_h: h,
            location: "a".into(),
            members,
            realization: Some(y),
        }
    }

    fn unit_coeffs(h: u32) -> HorizonCoefficients {
        HorizonCoefficients { horizon_h: h, a0: 0.0, a1: 1.0, c: 0.5, d: 1.0, b: 0.7 }
    }

    #[test]
    fn identical_variances_clamp_rho_with_warning() {
        let recs = vec![
            record("2020-01-01T12:00:00Z", 12, vec![0.0, 2.0], 1.0),
            record("2020-01-01T00:00:00Z", 24, vec![1.0, 3.0], 1.0),
        ];
        let data = Dataset::new(Variable::Temperature, recs).unwrap();
        let est = estimate_rho(&data, &[unit_coeffs(12), unit_coeffs(24)], ModelFamily::Nig, 0.7, MeanScale::Linear, RhoAveraging::PerRecord)
            .unwrap();
        assert_relative_eq!(est.schedule.values[0], RHO2_FLOOR.sqrt());
        assert_eq!(est.warnings.len(), 1);
        assert!(est.warnings[0].contains("12h-24h"));
    }

    #[test]
    fn missing_pairs_name_the_interval() {
        let recs = vec![
            record("2020-01-01T12:00:00Z", 12, vec![0.0, 2.0], 1.0),
            record("2020-01-05T00:00:00Z", 24, vec![1.0, 3.0], 1.0),
        ];
        let data = Dataset::new(Variable::Temperature, recs).unwrap();
        let err = estimate_rho(&data, &[unit_coeffs(12), unit_coeffs(24)], ModelFamily::Nig, 0.7, MeanScale::Linear, RhoAveraging::PerRecord)
            .unwrap_err();
        assert!(err.to_string().contains("12h-24h"), "{err}");
    }

    #[test]
    fn calibrate_rejects_bad_requests() {
        let data = generate_synthetic(&small_temperature(1)).unwrap().dataset;
        assert!(calibrate(&data, &CalibrationConfig::new(ModelFamily::LogGh)).is_err());
        let mut cfg = CalibrationConfig::new(ModelFamily::Nig);
        cfg.horizons = vec![12, 60];
        assert!(calibrate(&data, &cfg).unwrap_err().to_string().contains("60h"));
        cfg.horizons = vec![12];
        assert!(calibrate(&data, &cfg).is_err());
    }

    #[test]
    fn calibration_is_deterministic_and_round_trips() {
        let data = generate_synthetic(&small_temperature(9)).unwrap().dataset;
        let mut cfg = CalibrationConfig::new(ModelFamily::Nig);
        cfg.optimizer.restarts = 1;
        let a = calibrate(&data, &cfg).unwrap();
        let b = calibrate(&data, &cfg).unwrap();
        assert_eq!(a, b);
        let text = a.to_toml().unwrap();
        let back = CalibrationResult::from_toml(&text).unwrap();
        assert_eq!(back.per_horizon, a.per_horizon);
        assert_eq!(back.rho, a.rho);
        assert_eq!(back.shared_b, a.shared_b);
        let k = back.coefficients(24).unwrap();
        assert_eq!(k.b, a.shared_b);
        assert!(back.coefficients(30).is_none());
    }
}
