//! Synthetic ensembles generated from the forecast dynamics themselves, so
//! that every calibration step has a known answer.
//!
//! For each (valid time, location) a chain `(m, V)` is simulated from the
//! longest horizon down to the shortest; at each horizon the ensemble is
//! built so that its mean and spread map exactly onto the simulated
//! predictive mean and variance through the generating coefficients, and
//! the realization is drawn from the predictive law at the shortest
//! horizon. A state whose predictive variance falls below `c` has no exact
//! ensemble; see [`LowVariance`] for what happens to it.

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{HorizonCoefficients, MeanScale};
use crate::dataio::{Dataset, EnsembleRecord, Variable};
use crate::error::{Error, Result};
use crate::models::{self, ModelFamily, ModelParams, RhoSchedule};
use crate::{numerics, rng};

/// Law of the chain's starting state at the longest horizon. `V` is always
/// log-uniform on `[v_lo, v_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    /// `m` uniform on `[m_lo, m_hi]` (log-uniform for positive families).
    Mean { m_lo: f64, m_hi: f64, v_lo: f64, v_hi: f64 },
    /// Positive families: a pessimistic projection of the predictive
    /// variance at the shortest horizon (`m` and `V` both moved
    /// `target_sigmas` standard deviations down) is log-uniform on
    /// `[sigma2_lo, sigma2_hi]` independently of `V`, and `m` is solved from
    /// it. Small-`V` states then carry large means, and the variance rarely
    /// falls below `c` along the chain while `V` ranges widely.
    Variance { sigma2_lo: f64, sigma2_hi: f64, v_lo: f64, v_hi: f64 },
}

impl InitialLaw {
    fn v_range(&self) -> (f64, f64) {
        match *self {
            InitialLaw::Mean { v_lo, v_hi, .. } | InitialLaw::Variance { v_lo, v_hi, .. } => (v_lo, v_hi),
        }
    }

    fn validate(&self, positive: bool) -> Result<()> {
        let (v_lo, v_hi) = self.v_range();
        if !(v_lo > 0.0 && v_lo <= v_hi && v_hi.is_finite()) {
            return Err(Error::invalid("initial law needs 0 < v_lo <= v_hi"));
        }
        match *self {
            InitialLaw::Mean { m_lo, m_hi, .. } => {
                if !(m_lo <= m_hi && m_lo.is_finite() && m_hi.is_finite()) {
                    return Err(Error::invalid("initial law needs m_lo <= m_hi"));
                }
                if positive && !(m_lo > 0.0) {
                    return Err(Error::invalid("positive family needs m_lo > 0"));
                }
            }
            InitialLaw::Variance { sigma2_lo, sigma2_hi, .. } => {
                if !positive {
                    return Err(Error::invalid("the variance initial law is for positive families"));
                }
                if !(sigma2_lo > 0.0 && sigma2_lo <= sigma2_hi && sigma2_hi.is_finite()) {
                    return Err(Error::invalid("initial law needs 0 < sigma2_lo <= sigma2_hi"));
                }
            }
        }
        Ok(())
    }
}

/// Treatment of states whose predictive variance is at most `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowVariance {
    /// Keep the record with a collapsed ensemble (all members at the mean),
    /// so its variance is overstated but its mean stays exact. Pairs across
    /// horizons are then never selected on the path of `m`.
    #[default]
    Collapse,
    /// Leave the record out.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub family: ModelFamily,
    pub b: f64,
    /// `ρ` by lead time; breakpoints usually equal the horizons.
    pub rho: RhoSchedule,
    /// Generating EMOS coefficients, one per horizon (their `b` is ignored).
    pub coefficients: Vec<HorizonCoefficients>,
    pub n_dates: usize,
    pub n_locations: usize,
    pub members: usize,
    pub initial: InitialLaw,
    /// Euler sub-steps per hour of simulated time.
    pub substeps_per_hour: usize,
    /// Standard deviations of `m`- and `V`-movement below the mean at which
    /// [`InitialLaw::Variance`] places its variance target.
    #[serde(default = "default_target_sigmas")]
    pub target_sigmas: f64,
    #[serde(default)]
    pub low_variance: LowVariance,
    /// Scale of the generating mean map; `Log` needs a positive family.
    #[serde(default)]
    pub mean_scale: MeanScale,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: DateTime<Utc>,
}

fn default_target_sigmas() -> f64 {
    2.0
}

fn default_start() -> DateTime<Utc> {
    crate::dataio::parse_time("2015-01-03T00:00:00Z").expect("constant timestamp")
}

fn table_coefficients(row: (f64, f64, f64, f64), b: f64) -> Vec<HorizonCoefficients> {
    [12, 24, 36, 48]
        .into_iter()
        .map(|h| HorizonCoefficients { horizon_h: h, a0: row.0, a1: row.1, c: row.2, d: row.3, b })
        .collect()
}

impl SyntheticConfig {
    /// Wind speed with the log-NIG model at the published 12 h coefficients,
    /// 38 issue periods × 273 locations × 50 members.
    pub fn wind_reference() -> Self {
        let b = 0.035;
        SyntheticConfig {
            family: ModelFamily::LogNig,
            b,
            rho: RhoSchedule { breakpoints: vec![12.0, 24.0, 36.0, 48.0], values: vec![0.171, 0.153, 0.168] },
            coefficients: table_coefficients((0.117, 0.964, 0.360, 0.765), b),
            n_dates: 38,
            n_locations: 273,
            members: 50,
            initial: InitialLaw::Variance { sigma2_lo: 0.37, sigma2_hi: 1.5, v_lo: 0.01, v_hi: 0.5 },
            substeps_per_hour: 8,
            target_sigmas: default_target_sigmas(),
            low_variance: LowVariance::Collapse,
            mean_scale: MeanScale::Linear,
            seed: 1,
            start: default_start(),
        }
    }

    /// Temperature with the NIG model at the published 12 h coefficients.
    pub fn temperature_reference() -> Self {
        let b = 0.719;
        SyntheticConfig {
            family: ModelFamily::Nig,
            b,
            rho: RhoSchedule { breakpoints: vec![12.0, 24.0, 36.0, 48.0], values: vec![0.160, 0.163, 0.180] },
            coefficients: table_coefficients((0.217, 0.952, 0.312, 1.722), b),
            n_dates: 38,
            n_locations: 273,
            members: 50,
            initial: InitialLaw::Mean { m_lo: -10.0, m_hi: 20.0, v_lo: 3.0, v_hi: 8.0 },
            substeps_per_hour: 8,
            target_sigmas: default_target_sigmas(),
            low_variance: LowVariance::Collapse,
            mean_scale: MeanScale::Linear,
            seed: 2,
            start: default_start(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        super::check_family(self.family)?;
        ModelParams::new(self.family, self.b, self.rho.clone(), 1.0)?;
        if self.coefficients.len() < 2 {
            return Err(Error::invalid("synthetic data needs at least two horizons"));
        }
        if self.coefficients.windows(2).any(|w| w[0].horizon_h >= w[1].horizon_h) {
            return Err(Error::invalid("generating coefficients must be sorted by horizon"));
        }
        if self.coefficients.iter().any(|k| !(k.a1 != 0.0 && k.c >= 0.0 && k.d > 0.0)) {
            return Err(Error::invalid("generating coefficients need a1 != 0, c >= 0, d > 0"));
        }
        if self.n_dates == 0 || self.n_locations == 0 || self.members < 2 || self.substeps_per_hour == 0 {
            return Err(Error::invalid("synthetic sizes must be positive and members >= 2"));
        }
        if !(self.target_sigmas >= 0.0) {
            return Err(Error::invalid("target_sigmas must be >= 0"));
        }
        self.initial.validate(self.family.is_positive())?;
        if self.mean_scale == MeanScale::Log && !self.family.is_positive() {
            return Err(Error::invalid("a log mean map needs a positive family"));
        }
        Ok(())
    }

    pub fn variable(&self) -> Variable {
        if self.family.is_positive() {
            Variable::WindSpeed
        } else {
            Variable::Temperature
        }
    }
}

/// How a recovered parameter is compared with its generating value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    Absolute(f64),
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    /// `a0@12h`, `b`, `rho[12h-24h]`, …
    pub parameter: String,
    pub truth: f64,
    pub estimate: f64,
    pub tolerance: Tolerance,
}

impl RecoveryRow {
    pub fn abs_error(&self) -> f64 {
        (self.estimate - self.truth).abs()
    }

    pub fn rel_error(&self) -> f64 {
        self.abs_error() / self.truth.abs()
    }

    pub fn pass(&self) -> bool {
        match self.tolerance {
            Tolerance::Absolute(t) => self.abs_error() <= t,
            Tolerance::Relative(t) => self.rel_error() <= t,
        }
    }
}

/// Per-parameter comparison of a calibration with its generating values:
/// intercepts and slopes within 0.05, `c`, `d` and `b` within 20 %, each
/// `ρ` within 15 %.
pub fn recovery_report(truth: &SyntheticConfig, result: &super::CalibrationResult) -> Vec<RecoveryRow> {
    let mut rows = Vec::new();
    let row = |parameter: String, truth: f64, estimate: f64, tolerance: Tolerance| RecoveryRow { parameter, truth, estimate, tolerance };
    for k in &truth.coefficients {
        let Some(e) = result.per_horizon.iter().find(|e| e.horizon_h == k.horizon_h) else {
            continue;
        };
        let h = k.horizon_h;
        rows.push(row(format!("a0@{h}h"), k.a0, e.a0, Tolerance::Absolute(0.05)));
        rows.push(row(format!("a1@{h}h"), k.a1, e.a1, Tolerance::Absolute(0.05)));
        rows.push(row(format!("c@{h}h"), k.c, e.c, Tolerance::Relative(0.2)));
        rows.push(row(format!("d@{h}h"), k.d, e.d, Tolerance::Relative(0.2)));
    }
    rows.push(row("b".into(), truth.b, result.shared_b, Tolerance::Relative(0.2)));
    let bp = &result.rho.breakpoints;
    for (i, &rho) in result.rho.values.iter().enumerate() {
        let mid = 0.5 * (bp[i] + bp[i + 1]);
        rows.push(row(format!("rho[{}h-{}h]", bp[i], bp[i + 1]), truth.rho.at(mid), rho, Tolerance::Relative(0.15)));
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Records left out because `σ² ≤ c` (with [`LowVariance::Drop`]) or
    /// because no positive ensemble was found.
    pub dropped: usize,
    /// Records written with a collapsed ensemble.
    pub collapsed: usize,
}

fn standardized_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let mut e: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let mean = e.iter().sum::<f64>() / n as f64;
        let sd = (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-8 {
            e.iter_mut().for_each(|x| *x = (*x - mean) / sd);
            return e;
        }
    }
}

/// Standardized draws from a log-normal with coefficient of variation `cv`:
/// an ensemble `x̄ + s·e` built from them stays positive when the sample
/// `cv` is at least `s/x̄`.
fn skewed_standardized<R: Rng + ?Sized>(rng: &mut R, n: usize, cv: f64) -> Vec<f64> {
    let sigma = (1.0 + cv * cv).ln().sqrt();
    loop {
        let w: Vec<f64> = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); (sigma * z).exp() }).collect();
        let mean = w.iter().sum::<f64>() / n as f64;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-8 * mean {
            return w.iter().map(|x| (x - mean) / sd).collect();
        }
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    (lo.ln() + (hi.ln() - lo.ln()) * u).exp()
}

/// `unit_projection(v)` is the projected shortest-horizon variance of a
/// chain starting at `(1, v)`; it scales with `m²`.
fn draw_initial<R: Rng + ?Sized>(
    rng: &mut R,
    law: &InitialLaw,
    positive: bool,
    unit_projection: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    match *law {
        InitialLaw::Mean { m_lo, m_hi, v_lo, v_hi } => {
            let m = if positive {
                log_uniform(rng, m_lo, m_hi)
            } else {
                let u: f64 = rng.random();
                m_lo + (m_hi - m_lo) * u
            };
            Ok((m, log_uniform(rng, v_lo, v_hi)))
        }
        InitialLaw::Variance { sigma2_lo, sigma2_hi, v_lo, v_hi } => {
            let sigma2 = log_uniform(rng, sigma2_lo, sigma2_hi);
            let v = log_uniform(rng, v_lo, v_hi);
            let unit = unit_projection(v);
            if !(unit > 0.0) {
                return Err(Error::invalid(format!(
                    "V = {v} can fall to zero within target_sigmas; raise v_lo or lower target_sigmas"
                )));
            }
            Ok(((sigma2 / unit).sqrt(), v))
        }
    }
}

/// Members with mean `mean` and population variance `spread`; positive
/// families get right-skewed members so that they stay positive.
fn linear_members<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    spread: f64,
    n: usize,
    positive: bool,
) -> Option<Vec<f64>> {
    if spread == 0.0 {
        return (!positive || mean > 0.0).then(|| vec![mean; n]);
    }
    for _ in 0..50 {
        let e = if positive {
            skewed_standardized(rng, n, 1.5 * spread.sqrt() / mean.abs())
        } else {
            standardized_normals(rng, n)
        };
        let x: Vec<f64> = e.iter().map(|z| mean + spread.sqrt() * z).collect();
        if !positive || x.iter().all(|&xi| xi > 0.0) {
            return Some(x);
        }
    }
    None
}

/// Members `exp(log_mean + τ·eᵢ)`: the mean of their logs is `log_mean`
/// exactly and `τ` is solved so their population variance is `spread`.
fn log_members<R: Rng + ?Sized>(rng: &mut R, log_mean: f64, spread: f64, n: usize) -> Result<Option<Vec<f64>>> {
    if spread == 0.0 {
        return Ok(Some(vec![log_mean.exp(); n]));
    }
    let e = standardized_normals(rng, n);
    let build = |tau: f64| -> Vec<f64> { e.iter().map(|z| (log_mean + tau * z).exp()).collect() };
    let excess = |tau: f64| -> Result<f64> {
        let x = build(tau);
        let mean = x.iter().sum::<f64>() / n as f64;
        Ok((x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).ln() - spread.ln())
    };
    let mut hi = 1e-3;
    while excess(hi)? < 0.0 {
        hi *= 2.0;
        if hi > 50.0 {
            return Ok(None);
        }
    }
    let tau = numerics::find_root(excess, 1e-12, hi, 1e-12)?;
    Ok(Some(build(tau)))
}

/// Generates a joined synthetic dataset. Deterministic in `config.seed`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let horizons: Vec<u32> = config.coefficients.iter().map(|k| k.horizon_h).collect();
    let h_max = *horizons.last().unwrap();
    let params = ModelParams::new(config.family, config.b, config.rho.clone(), h_max as f64)?;
    // times of the forecasts along a chain, from the longest horizon down
    let times: Vec<f64> = horizons.iter().rev().map(|&h| (h_max - h) as f64).collect();
    let mut dthetas: Vec<Vec<f64>> = Vec::new();
    for w in times.windows(2) {
        let n = ((w[1] - w[0]) * config.substeps_per_hour as f64).round().max(1.0) as usize;
        let step = (w[1] - w[0]) / n as f64;
        let mut inc = Vec::with_capacity(n);
        for s in 0..n {
            let a = w[0] + step * s as f64;
            let b = if s + 1 == n { w[1] } else { a + step };
            inc.push(
                models::time_change(&params.rho, params.delivery, b)?
                    - models::time_change(&params.rho, params.delivery, a)?,
            );
        }
        dthetas.push(inc);
    }

    let positive = config.family.is_positive();
    let theta_total: f64 = dthetas.iter().flatten().sum();
    let kappa = if config.family == ModelFamily::LogNig { 1.0 + 0.5 * config.b * config.b } else { 1.0 };
    // low projection of (m, V) after the whole chain; V's conditional
    // variance is that of a square-root process decaying at rate kappa
    let unit_projection = |v: f64| -> f64 {
        let z = config.target_sigmas;
        let decay = (-kappa * theta_total).exp();
        let v_var = v * config.b * config.b / kappa * (decay - decay * decay);
        let v_low = (v * decay - z * v_var.sqrt()).max(0.0);
        let m_low = (-z * (v * theta_total).sqrt() - 0.5 * v * theta_total).exp();
        m_low * m_low * v_low.exp_m1()
    };
    let mut records = Vec::new();
    let mut dropped = 0;
    let mut collapsed = 0;
    for k in 0..config.n_locations {
        let location = format!("loc{:03}", k + 1);
        for t in 0..config.n_dates {
            let chain = (k * config.n_dates + t) as u64;
            let mut r = rng::stream(config.seed, chain);
            let (mut m, mut v) = draw_initial(&mut r, &config.initial, positive, unit_projection)?;
            let valid: DateTime<Utc> = config.start + Duration::hours(12 * t as i64 + h_max as i64);
            // states at horizons, longest first
            let mut states = vec![(m, v)];
            for inc in &dthetas {
                for &dt in inc {
                    let z_m: f64 = StandardNormal.sample(&mut r);
                    let z_v: f64 = StandardNormal.sample(&mut r);
                    (m, v) = models::step(config.family, config.b, m, v, dt, z_m, z_v);
                }
                states.push((m, v));
            }
            let y = models::draw_terminal(config.family, config.b, m, v, &mut r);
            for (coef, &(m, v)) in config.coefficients.iter().zip(states.iter().rev()) {
                let sigma2 = if positive { m * m * v.exp_m1() } else { v };
                let mut spread = (sigma2 - coef.c) / coef.d;
                if !(spread > 0.0) {
                    match config.low_variance {
                        LowVariance::Drop => {
                            dropped += 1;
                            continue;
                        }
                        LowVariance::Collapse => {
                            collapsed += 1;
                            spread = 0.0;
                        }
                    }
                }
                let members = match config.mean_scale {
                    MeanScale::Linear => linear_members(&mut r, (m - coef.a0) / coef.a1, spread, config.members, positive),
                    MeanScale::Log => log_members(&mut r, (m.ln() - coef.a0) / coef.a1, spread, config.members)?,
                };
                let Some(members) = members else {
                    dropped += 1;
                    continue;
                };
                records.push(EnsembleRecord {
                    issue_time: valid - Duration::hours(coef.horizon_h as i64),
                    horizon_h: coef.horizon_h,
                    location: location.clone(),
                    members,
                    realization: Some(y),
                });
            }
        }
    }
    let dataset = Dataset::new(config.variable(), records)?;
    Ok(SyntheticData { dataset, dropped, collapsed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{emos_predictive, ensemble_stats};
    use approx::assert_relative_eq;

    fn small(mut cfg: SyntheticConfig) -> SyntheticConfig {
        cfg.n_dates = 6;
        cfg.n_locations = 5;
        cfg.members = 8;
        cfg.substeps_per_hour = 2;
        cfg
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = small(SyntheticConfig::wind_reference());
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(a.dataset, generate_synthetic(&other).unwrap().dataset);
    }

    #[test]
    fn shapes_and_shared_realizations() {
        let cfg = small(SyntheticConfig::temperature_reference());
        let data = generate_synthetic(&cfg).unwrap();
        assert_eq!(data.dropped, 0);
        assert_eq!(data.dataset.horizons(), vec![12, 24, 36, 48]);
        for h in [12, 24, 36, 48] {
            assert_eq!(data.dataset.records(h).len(), 30);
        }
        let by_valid = data.dataset.index_by_valid_time(12);
        for r in data.dataset.records(48) {
            let later = by_valid[&(r.valid_time(), r.location.as_str())];
            assert_eq!(r.realization, later.realization);
        }
    }

    #[test]
    fn ensembles_reproduce_the_generating_predictive() {
        for cfg in [SyntheticConfig::wind_reference(), SyntheticConfig::temperature_reference()] {
            let cfg = small(cfg);
            let data = generate_synthetic(&cfg).unwrap();
            for k in &cfg.coefficients {
                for r in data.dataset.records(k.horizon_h) {
                    let (mean, spread) = ensemble_stats(&r.members).unwrap();
                    let (_, s2) = emos_predictive(k, mean, spread);
                    assert!(s2 >= k.c * (1.0 - 1e-12));
                    if cfg.family.is_positive() {
                        assert!(r.members.iter().all(|&x| x > 0.0));
                        assert!(r.realization.unwrap() > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn log_mean_members_hit_both_moments() {
        let mut cfg = small(SyntheticConfig::wind_reference());
        cfg.mean_scale = MeanScale::Log;
        cfg.coefficients.iter_mut().for_each(|k| {
            k.a0 = 0.05;
            k.a1 = 0.98;
        });
        let data = generate_synthetic(&cfg).unwrap();
        let r = &data.dataset.records(24)[0];
        let log_mean = r.members.iter().map(|x| x.ln()).sum::<f64>() / r.members.len() as f64;
        let (_, spread) = ensemble_stats(&r.members).unwrap();
        assert!(spread >= 0.0);
        assert!(log_mean.is_finite());
        let mut nig = small(SyntheticConfig::temperature_reference());
        nig.mean_scale = MeanScale::Log;
        assert!(generate_synthetic(&nig).is_err());
    }

    #[test]
    fn low_variance_policies() {
        let mut cfg = small(SyntheticConfig::temperature_reference());
        cfg.initial = InitialLaw::Mean { m_lo: 0.0, m_hi: 1.0, v_lo: 0.2, v_hi: 0.6 };
        let collapsed = generate_synthetic(&cfg).unwrap();
        assert!(collapsed.collapsed > 0);
        assert_eq!(collapsed.dropped, 0);
        assert_eq!(collapsed.dataset.len(), 4 * 30);
        cfg.low_variance = LowVariance::Drop;
        let dropped = generate_synthetic(&cfg).unwrap();
        assert_eq!(dropped.dropped, collapsed.collapsed);
        assert_eq!(dropped.dataset.len() + dropped.dropped, 4 * 30);
        let degenerate = &collapsed.dataset;
        let zero_spread = degenerate
            .horizons()
            .iter()
            .flat_map(|&h| degenerate.records(h))
            .filter(|r| ensemble_stats(&r.members).unwrap().1 < 1e-20)
            .count();
        assert_relative_eq!(zero_spread as f64, collapsed.collapsed as f64);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small(SyntheticConfig::wind_reference());
        cfg.members = 1;
        assert!(generate_synthetic(&cfg).is_err());
        let mut cfg = small(SyntheticConfig::wind_reference());
        cfg.initial = InitialLaw::Mean { m_lo: -1.0, m_hi: 2.0, v_lo: 0.1, v_hi: 0.2 };
        assert!(generate_synthetic(&cfg).is_err());
        let mut cfg = small(SyntheticConfig::temperature_reference());
        cfg.family = ModelFamily::LogGh;
        assert!(generate_synthetic(&cfg).is_err());
    }
}
