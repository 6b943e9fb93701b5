//! Forecast verification: squared error, CRPS (ensemble and parametric),
//! rank and PIT histograms, central-interval widths.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{ensemble_stats, CalibrationResult, MeanScale};
use crate::dataio::{Dataset, EnsembleRecord};
use crate::error::{Error, Result};
use crate::models::{self, laws, ForecastState, ModelFamily, ModelParams, NigCanonical};
use crate::numerics::{self, adaptive_quad, find_root, integrate_between};
use crate::rng;

/// Point forecast used by [`mse`].
#[derive(Debug, Clone, Copy)]
pub enum PointForecast<'a> {
    /// The ensemble mean.
    Raw,
    /// The calibrated mean map.
    Model(&'a crate::calibration::HorizonCoefficients, MeanScale),
}

fn point_prediction(members: &[f64], forecast: PointForecast<'_>) -> Result<f64> {
    let (mean, _) = ensemble_stats(members)?;
    Ok(match forecast {
        PointForecast::Raw => mean,
        PointForecast::Model(k, MeanScale::Linear) => k.a0 + k.a1 * mean,
        PointForecast::Model(k, MeanScale::Log) => {
            let lx = members.iter().map(|x| x.ln()).sum::<f64>() / members.len() as f64;
            (k.a0 + k.a1 * lx).exp()
        }
    })
}

/// Mean squared error of point forecasts against the realizations.
pub fn mse(records: &[EnsembleRecord], forecast: PointForecast<'_>) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("mse of an empty record set"));
    }
    let mut sum = 0.0;
    for r in records {
        let y = realization(r)?;
        sum += (point_prediction(&r.members, forecast)? - y).powi(2);
    }
    Ok(sum / records.len() as f64)
}

fn realization(r: &EnsembleRecord) -> Result<f64> {
    r.realization
        .ok_or_else(|| Error::invalid(format!("record {} {}h has no realization", r.location, r.horizon_h)))
}

/// CRPS of the empirical distribution of `members` at `y`, from the order
/// statistics: `(2/M) Σ (x₍ₗ₎ − y)(1{y < x₍ₗ₎} − (ℓ − ½)/M)`.
pub fn crps_ensemble(members: &[f64], y: f64) -> f64 {
    let mut x = members.to_vec();
    x.sort_by(f64::total_cmp);
    let m = x.len() as f64;
    let mut s = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let ind = if y < xi { 1.0 } else { 0.0 };
        s += (xi - y) * (ind - (i as f64 + 0.5) / m);
    }
    2.0 * s / m
}

/// `e^z − 1` without cancellation for small `|z|`.
fn expm1(z: Complex64) -> Complex64 {
    let (a, b) = (z.re, z.im);
    let s = (0.5 * b).sin();
    Complex64::new(a.exp_m1() * b.cos() - 2.0 * s * s, a.exp() * b.sin())
}

/// CRPS of a NIG law at `y` through the Plancherel identity
/// `CRPS = (1/π) ∫₀^∞ |φ(u) − e^{iuy}|² / u² du`.
///
/// The integral is taken on doubling pieces up to a cut-off `U` chosen from
/// the envelope `|φ(u)| ≤ exp(δ(γ − √(γ² + u²)))`; beyond `U` the integrand
/// is `1/u²` up to a term bounded by `3|φ(U)|/u²`, so `1/U` is added and
/// the remainder stays below `tol/2`.
pub fn crps_parametric(c: &NigCanonical, y: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid("CRPS tolerance must be > 0"));
    }
    if !(c.alpha > c.beta.abs() && c.delta >= 0.0) || !y.is_finite() {
        return Err(Error::domain("crps_parametric needs alpha > |beta|, delta >= 0, finite y"));
    }
    if c.delta == 0.0 {
        return Ok((y - c.mu).abs());
    }
    let sd = c.variance().sqrt();
    let envelope = |u: f64| (c.delta * (c.gamma - c.gamma.hypot(u))).exp();
    let u0 = 1.0 / sd;
    let mut upper = u0;
    let mut pieces = 1usize;
    while 3.0 * envelope(upper) / (PI * upper) >= 0.5 * tol {
        upper *= 2.0;
        pieces += 1;
        if pieces > 200 {
            return Err(Error::Numerical("CRPS cut-off search did not terminate".into()));
        }
    }
    let integrand = |u: f64| -> f64 {
        if u == 0.0 {
            return (c.mean() - y).powi(2) + c.variance();
        }
        let z = laws::char_exponent(c, u) - Complex64::new(0.0, u * y);
        expm1(z).norm_sqr() / (u * u)
    };
    let piece_tol = PI * 0.5 * tol / pieces as f64;
    let mut total = adaptive_quad(integrand, 0.0, u0, piece_tol)?.value;
    let mut a = u0;
    while a < upper {
        total += adaptive_quad(integrand, a, 2.0 * a, piece_tol)?.value;
        a *= 2.0;
    }
    Ok(((total + 1.0 / upper) / PI).max(0.0))
}

/// CRPS in the working variable (`m_T`, or `log m_T` for the positive
/// families) by direct quadrature of `∫ (F − 1{y ≤ ·})²`; slow, but valid for
/// every family. `y` is on the working scale.
pub(crate) fn crps_working_quadrature(family: ModelFamily, b: f64, m: f64, v: f64, y: f64, tol: f64) -> Result<f64> {
    let center = if family.is_positive() { m.ln() } else { m };
    if v == 0.0 {
        return Ok((y - center).abs());
    }
    let scale = v.sqrt();
    let inner = 0.01 * tol;
    let mut below = |s: f64| laws::working_cdf(family, b, m, v, center, s, inner).map(|p| p * p).unwrap_or(f64::NAN);
    let lo = integrate_between(&mut below, f64::NEG_INFINITY, y, center, scale, 0.5 * tol)?.value;
    let mut above = |s: f64| laws::working_cdf(family, b, m, v, center, s, inner).map(|p| (1.0 - p).powi(2)).unwrap_or(f64::NAN);
    let hi = integrate_between(&mut above, y, f64::INFINITY, center, scale, 0.5 * tol)?.value;
    Ok(lo + hi)
}

/// CRPS of the predictive law at `x` on the original scale by direct
/// quadrature of the squared CDF difference; the independent oracle for
/// [`crps_parametric`].
pub fn crps_quadrature(params: &ModelParams, state: &ForecastState, x: f64, tol: f64) -> Result<f64> {
    params.validate()?;
    state.check(params.family)?;
    if !params.family.is_positive() {
        return crps_working_quadrature(params.family, params.b, state.m, state.v, x, tol);
    }
    if state.v == 0.0 {
        return Ok((x - state.m).abs());
    }
    let inner = 0.01 * tol;
    let cdf = |s: f64| models::predictive_cdf(params, state, s, inner).unwrap_or(f64::NAN);
    let scale = state.m * state.v.exp_m1().sqrt();
    let mut below = |s: f64| cdf(s).powi(2);
    let lo = integrate_between(&mut below, 0.0, x.max(0.0), state.m, scale, 0.5 * tol)?.value;
    let mut above = |s: f64| (1.0 - cdf(s)).powi(2);
    let hi = integrate_between(&mut above, x.max(0.0), f64::INFINITY, state.m, scale, 0.5 * tol)?.value;
    Ok(lo + hi + if x < 0.0 { -x } else { 0.0 })
}

/// CRPS of the predictive law on the working scale: Plancherel for the NIG
/// families (log-NIG in `log x`), quadrature otherwise. `x` is on the
/// original scale and is logged here for the positive families.
pub fn predictive_crps(params: &ModelParams, state: &ForecastState, x: f64, tol: f64) -> Result<f64> {
    state.check(params.family)?;
    let y = if params.family.is_positive() {
        if !(x > 0.0) {
            return Err(Error::domain(format!("{} CRPS needs a positive realization, got {x}", params.family)));
        }
        x.ln()
    } else {
        x
    };
    match params.family {
        ModelFamily::Nig | ModelFamily::LogNig => {
            let c = models::canonical_nig_params(params.family, state.m, state.v, params.b)?;
            crps_parametric(&c, y, tol)
        }
        _ => crps_working_quadrature(params.family, params.b, state.m, state.v, y, tol),
    }
}

/// Rank of `y` among `members` (0..=M), ties broken uniformly at random.
pub fn rank_of<R: Rng + ?Sized>(members: &[f64], y: f64, rng: &mut R) -> usize {
    let below = members.iter().filter(|&&x| x < y).count();
    let ties = members.iter().filter(|&&x| x == y).count();
    if ties == 0 {
        below
    } else {
        below + rng.random_range(0..=ties)
    }
}

/// Talagrand histogram: counts of the realization's rank over `M + 1` bins.
pub fn rank_histogram(records: &[EnsembleRecord], seed: u64) -> Result<Vec<u64>> {
    let Some(first) = records.first() else {
        return Err(Error::invalid("rank histogram of an empty record set"));
    };
    let m = first.members.len();
    let mut counts = vec![0u64; m + 1];
    for (i, r) in records.iter().enumerate() {
        if r.members.len() != m {
            return Err(Error::invalid(format!(
                "rank histogram needs equal ensemble sizes ({m} vs {})",
                r.members.len()
            )));
        }
        let mut g = rng::stream(seed, i as u64);
        counts[rank_of(&r.members, realization(r)?, &mut g)] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitHistogram {
    pub counts: Vec<u64>,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
}

const PIT_SLACK: f64 = 1e-9;

/// Histogram of PIT values on `bins` equal bins, with the Kolmogorov–Smirnov
/// statistic against the uniform law. Values may overshoot `[0, 1]` by
/// quadrature noise of up to 1e-9.
pub fn pit_histogram(values: &[f64], bins: usize) -> Result<PitHistogram> {
    if bins == 0 {
        return Err(Error::invalid("PIT histogram needs at least one bin"));
    }
    let mut clean = Vec::with_capacity(values.len());
    for &v in values {
        if !(v >= -PIT_SLACK && v <= 1.0 + PIT_SLACK) {
            return Err(Error::invalid(format!("PIT value {v} outside [0, 1]")));
        }
        clean.push(v.clamp(0.0, 1.0));
    }
    let mut counts = vec![0u64; bins];
    for &v in &clean {
        counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let d = numerics::ks_uniform_statistic(&clean)?;
    Ok(PitHistogram { counts, ks_statistic: d, ks_pvalue: numerics::ks_pvalue(d, clean.len()) })
}

/// Predictive quantile at probability `p` by root-finding on the CDF.
pub fn predictive_quantile(params: &ModelParams, state: &ForecastState, p: f64, tol: f64) -> Result<f64> {
    params.validate()?;
    state.check(params.family)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level must be in (0, 1), got {p}")));
    }
    let family = params.family;
    let center = if family.is_positive() { state.m.ln() } else { state.m };
    if state.v == 0.0 {
        return Ok(state.m);
    }
    let scale = state.v.sqrt();
    let f = |s: f64| laws::working_cdf(family, params.b, state.m, state.v, center, s, 0.01 * tol).map(|c| c - p);
    let (mut lo, mut hi) = (center - scale, center + scale);
    let mut k = 0;
    while f(lo)? > 0.0 {
        lo = center - (center - lo) * 2.0;
        k += 1;
        if k > 80 {
            return Err(Error::Numerical("quantile bracket search failed".into()));
        }
    }
    while f(hi)? < 0.0 {
        hi = center + (hi - center) * 2.0;
        k += 1;
        if k > 160 {
            return Err(Error::Numerical("quantile bracket search failed".into()));
        }
    }
    let q = find_root(f, lo, hi, tol * scale)?;
    Ok(if family.is_positive() { q.exp() } else { q })
}

/// Width of the central predictive interval at `level`.
pub fn ci_width(params: &ModelParams, state: &ForecastState, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("interval level must be in (0, 1), got {level}")));
    }
    let tol = 1e-9;
    let hi = predictive_quantile(params, state, 0.5 * (1.0 + level), tol)?;
    let lo = predictive_quantile(params, state, 0.5 * (1.0 - level), tol)?;
    Ok(hi - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub pit_bins: usize,
    pub ci_level: f64,
    /// Absolute tolerance of each CRPS / CDF evaluation.
    pub tol: f64,
    /// Compare raw and model forecasts on the log scale (log members, log
    /// realization, log-space CRPS). Defaults to on for positive families.
    pub log_scale: Option<bool>,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { pit_bins: 20, ci_level: 0.9, tol: 1e-6, log_scale: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScores {
    pub horizon_h: u32,
    pub n_records: usize,
    pub mse_raw: f64,
    pub crps_raw: f64,
    /// Model metrics; absent in raw-only scoring.
    pub mse_model: Option<f64>,
    pub crps_model: Option<f64>,
    pub ci_width_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub log_scale: bool,
    pub ci_level: f64,
    pub horizons: Vec<HorizonScores>,
    pub talagrand: BTreeMap<u32, Vec<u64>>,
    pub pit: BTreeMap<u32, PitHistogram>,
}

struct RecordScore {
    se_raw: f64,
    se_model: f64,
    crps_raw: f64,
    crps_model: f64,
    width: f64,
    pit: f64,
}

fn score_record(
    r: &EnsembleRecord,
    calibration: &CalibrationResult,
    params: &ModelParams,
    log_scale: bool,
    config: &ScoreConfig,
) -> Result<RecordScore> {
    let y = realization(r)?;
    let k = calibration
        .coefficients(r.horizon_h)
        .ok_or_else(|| Error::invalid(format!("no coefficients for horizon {}h", r.horizon_h)))?;
    let state = calibration.state(r.horizon_h, &r.members)?;
    let model_point = point_prediction(&r.members, PointForecast::Model(&k, calibration.mean_scale))?;
    let (se_raw, se_model, crps_raw) = if log_scale {
        if !(y > 0.0) || r.members.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::domain("log-scale scores need positive members and realizations"));
        }
        let logs: Vec<f64> = r.members.iter().map(|x| x.ln()).collect();
        let raw = logs.iter().sum::<f64>() / logs.len() as f64;
        ((raw - y.ln()).powi(2), (model_point.ln() - y.ln()).powi(2), crps_ensemble(&logs, y.ln()))
    } else {
        let raw = point_prediction(&r.members, PointForecast::Raw)?;
        ((raw - y).powi(2), (model_point - y).powi(2), crps_ensemble(&r.members, y))
    };
    let crps_model = if log_scale == params.family.is_positive() {
        predictive_crps(params, &state, y, config.tol)?
    } else if log_scale {
        return Err(Error::invalid("log-scale scoring needs a positive family"));
    } else {
        crps_quadrature(params, &state, y, config.tol)?
    };
    Ok(RecordScore {
        se_raw,
        se_model,
        crps_raw,
        crps_model,
        width: ci_width(params, &state, config.ci_level)?,
        pit: models::predictive_cdf(params, &state, y, 0.01 * config.tol)?,
    })
}

/// Scores raw and calibrated forecasts horizon by horizon.
pub fn score_dataset(dataset: &Dataset, calibration: &CalibrationResult, config: &ScoreConfig) -> Result<ScoreReport> {
    if !(config.tol > 0.0) {
        return Err(Error::invalid("score tolerance must be > 0"));
    }
    let log_scale = config.log_scale.unwrap_or(calibration.family.is_positive());
    let params = ModelParams::new(calibration.family, calibration.shared_b, calibration.rho.clone(), 1.0)?;
    let mut report = ScoreReport {
        log_scale,
        ci_level: config.ci_level,
        horizons: Vec::new(),
        talagrand: BTreeMap::new(),
        pit: BTreeMap::new(),
    };
    for k in &calibration.per_horizon {
        let records = dataset.records(k.horizon_h);
        if records.is_empty() {
            continue;
        }
        let scores: Vec<RecordScore> = records
            .par_iter()
            .map(|r| score_record(r, calibration, &params, log_scale, config))
            .collect::<Result<_>>()?;
        let n = scores.len() as f64;
        let mean = |f: fn(&RecordScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
        report.horizons.push(HorizonScores {
            horizon_h: k.horizon_h,
            n_records: scores.len(),
            mse_raw: mean(|s| s.se_raw),
            crps_raw: mean(|s| s.crps_raw),
            mse_model: Some(mean(|s| s.se_model)),
            crps_model: Some(mean(|s| s.crps_model)),
            ci_width_mean: Some(mean(|s| s.width)),
        });
        report.talagrand.insert(k.horizon_h, rank_histogram(records, rng::derive_seed(config.seed, k.horizon_h as u64))?);
        let pits: Vec<f64> = scores.iter().map(|s| s.pit).collect();
        report.pit.insert(k.horizon_h, pit_histogram(&pits, config.pit_bins)?);
    }
    if report.horizons.is_empty() {
        return Err(Error::invalid("no calibrated horizon has records to score"));
    }
    Ok(report)
}

fn raw_scores(r: &EnsembleRecord, log_scale: bool) -> Result<(f64, f64)> {
    let y = realization(r)?;
    if log_scale {
        if !(y > 0.0) || r.members.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::domain("log-scale scores need positive members and realizations"));
        }
        let logs: Vec<f64> = r.members.iter().map(|x| x.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        Ok(((mean - y.ln()).powi(2), crps_ensemble(&logs, y.ln())))
    } else {
        let mean = point_prediction(&r.members, PointForecast::Raw)?;
        Ok(((mean - y).powi(2), crps_ensemble(&r.members, y)))
    }
}

/// Ensemble-only verification (no calibration): squared error of the
/// ensemble mean, ensemble CRPS and rank histograms per horizon.
pub fn score_raw(dataset: &Dataset, config: &ScoreConfig) -> Result<ScoreReport> {
    let log_scale = config.log_scale.unwrap_or(false);
    let mut report = ScoreReport {
        log_scale,
        ci_level: config.ci_level,
        horizons: Vec::new(),
        talagrand: BTreeMap::new(),
        pit: BTreeMap::new(),
    };
    for h in dataset.horizons() {
        let records = dataset.records(h);
        if records.is_empty() {
            continue;
        }
        let scores: Vec<(f64, f64)> = records.par_iter().map(|r| raw_scores(r, log_scale)).collect::<Result<_>>()?;
        let n = scores.len() as f64;
        report.horizons.push(HorizonScores {
            horizon_h: h,
            n_records: scores.len(),
            mse_raw: scores.iter().map(|s| s.0).sum::<f64>() / n,
            crps_raw: scores.iter().map(|s| s.1).sum::<f64>() / n,
            mse_model: None,
            crps_model: None,
            ci_width_mean: None,
        });
        report.talagrand.insert(h, rank_histogram(records, rng::derive_seed(config.seed, h as u64))?);
    }
    if report.horizons.is_empty() {
        return Err(Error::invalid("no records to score"));
    }
    Ok(report)
}

impl ScoreReport {
    /// `horizon_h,metric,value`, one row per horizon per metric.
    pub fn write_scores_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["horizon_h", "metric", "value"])?;
        for h in &self.horizons {
            let pit = self.pit.get(&h.horizon_h);
            let rows = [
                ("n_records", Some(h.n_records as f64)),
                ("mse_raw", Some(h.mse_raw)),
                ("mse_model", h.mse_model),
                ("crps_raw", Some(h.crps_raw)),
                ("crps_model", h.crps_model),
                ("ci_width_mean", h.ci_width_mean),
                ("pit_ks_statistic", pit.map(|p| p.ks_statistic)),
                ("pit_ks_pvalue", pit.map(|p| p.ks_pvalue)),
            ];
            for (name, v) in rows {
                if let Some(v) = v {
                    out.write_record([h.horizon_h.to_string(), name.to_string(), format!("{v}")])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// `horizon_h,kind,bin,count` for the Talagrand and PIT histograms.
    pub fn write_histograms_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["horizon_h", "kind", "bin", "count"])?;
        for (h, counts) in &self.talagrand {
            for (i, c) in counts.iter().enumerate() {
                out.write_record([h.to_string(), "talagrand".into(), i.to_string(), c.to_string()])?;
            }
        }
        for (h, pit) in &self.pit {
            for (i, c) in pit.counts.iter().enumerate() {
                out.write_record([h.to_string(), "pit".into(), i.to_string(), c.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
