//! Intraday wind-power trading with a dynamic probabilistic forecast: joint
//! simulation of price and forecast, CARA-optimal positions by regression
//! Monte Carlo, and the comparison of a stochastic-uncertainty model (A)
//! with a constant-diffusion point-forecast model (B).

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsmc::{self, ControlProblem, LsmcConfig, PolicyTable};
use crate::models::{self, laws, ModelFamily, ModelParams, RhoSchedule};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub s0: f64,
    pub mu_s: f64,
    pub sigma_s: f64,
    /// Correlation between price noise and forecast-mean noise.
    pub lambda: f64,
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s >= 0.0) || !self.s0.is_finite() || !self.mu_s.is_finite() {
            return Err(Error::invalid("market needs finite S0, mu_S and sigma_S >= 0"));
        }
        if !(self.lambda.abs() <= 1.0) {
            return Err(Error::invalid(format!("correlation lambda = {} outside [-1, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// Log-NIG forecast dynamics with a constant correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub m0: f64,
    pub v0: f64,
    pub b: f64,
    pub rho: f64,
}

impl ForecastModel {
    pub fn params(&self, delivery: f64) -> Result<ModelParams> {
        let p = ModelParams::new(ModelFamily::LogNig, self.b, RhoSchedule::constant(self.rho), delivery)?;
        models::ForecastState::new(0.0, self.m0, self.v0).check(ModelFamily::LogNig)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMRule {
    /// `σ_m = ρ√V₀`: matches model A's instantaneous diffusion at t = 0.
    RhoSqrtV0,
    /// `σ_m = V₀`, the literal alternative.
    V0,
}

impl SigmaMRule {
    pub fn sigma_m(self, model: &ForecastModel) -> f64 {
        match self {
            SigmaMRule::RhoSqrtV0 => model.rho * model.v0.sqrt(),
            SigmaMRule::V0 => model.v0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Stochastic uncertainty: state `(S, m, V)`.
    A,
    /// `dm/m = σ_m dW`: state `(S, m)`.
    B { sigma_m: f64 },
}

impl ModelVariant {
    pub fn dim(self) -> usize {
        match self {
            ModelVariant::A => 3,
            ModelVariant::B { .. } => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::A => "A",
            ModelVariant::B { .. } => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradingConfig {
    pub risk_aversion: f64,
    pub k: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub decision_times: Vec<f64>,
    pub delivery: f64,
    /// Position grid; when absent, `[-1, 1]` by 0.01 for a martingale price
    /// and `[-5, 5]` by 0.05 otherwise.
    #[serde(default)]
    pub controls: Option<GridSpec>,
    pub n_train: usize,
    pub n_test: usize,
}

impl TradingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m_min > 0.0 && self.m_max > self.m_min) {
            return Err(Error::invalid("need 0 < m_min < m_max"));
        }
        if !(self.k >= 0.0) {
            return Err(Error::invalid("imbalance penalty K must be >= 0"));
        }
        if !(self.risk_aversion > 0.0) {
            return Err(Error::invalid("risk aversion must be > 0"));
        }
        let t = &self.decision_times;
        if t.is_empty() || t[0] < 0.0 || t.windows(2).any(|w| w[1] <= w[0]) || *t.last().unwrap() >= self.delivery {
            return Err(Error::invalid("decision times must be >= 0, strictly increasing and before delivery"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid("n_train and n_test must be >= 1"));
        }
        Ok(())
    }

    pub fn control_grid(&self, mu_s: f64) -> Result<Vec<f64>> {
        let g = self.controls.unwrap_or(if mu_s == 0.0 {
            GridSpec { lo: -1.0, hi: 1.0, step: 0.01 }
        } else {
            GridSpec { lo: -5.0, hi: 5.0, step: 0.05 }
        });
        lsmc::uniform_grid(g.lo, g.hi, g.step)
    }

    pub fn n_stages(&self) -> usize {
        self.decision_times.len()
    }
}

/// Stylized power curve: 0 below cut-in, linear up to rated speed, then 1.
pub fn power_curve(m: f64, m_min: f64, m_max: f64) -> f64 {
    ((m - m_min) / (m_max - m_min)).clamp(0.0, 1.0)
}

/// Joint paths at the decision times plus the delivery values. Row-major:
/// entry `p * N + i` is path `p` at decision `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPaths {
    pub n_stages: usize,
    pub s: Vec<f64>,
    pub m: Vec<f64>,
    /// Empty for model B.
    pub v: Vec<f64>,
    pub s_t: Vec<f64>,
    pub m_t: Vec<f64>,
}

impl JointPaths {
    pub fn n_paths(&self) -> usize {
        self.s_t.len()
    }

    /// `S_{t_{i+1}} − S_{t_i}`, with `S_T` after the last decision.
    #[inline]
    pub fn delta_s(&self, p: usize, i: usize) -> f64 {
        let n = self.n_stages;
        let next = if i + 1 < n { self.s[p * n + i + 1] } else { self.s_t[p] };
        next - self.s[p * n + i]
    }
}

struct PathRow {
    s: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    s_t: f64,
    m_t: f64,
}

fn correlated(lambda: f64, z_m: f64, z_p: f64) -> f64 {
    lambda * z_m + (1.0 - lambda * lambda).sqrt() * z_p
}

/// Simulates `n` joint paths. The price is an exact arithmetic Brownian
/// motion; under model A `(m, V)` are sub-stepped in the time-changed clock
/// and `m_T` is drawn exactly from the predictive law at the last decision,
/// its Gaussian factor correlated with the last price increment. Under
/// model B the log-normal forecast is stepped exactly.
pub fn simulate_joint(
    variant: ModelVariant,
    model: &ForecastModel,
    market: &MarketParams,
    config: &TradingConfig,
    substeps: usize,
    n: usize,
    seed: u64,
) -> Result<JointPaths> {
    market.validate()?;
    config.validate()?;
    if substeps == 0 || n == 0 {
        return Err(Error::invalid("need substeps >= 1 and n >= 1"));
    }
    let params = model.params(config.delivery)?;
    let times = &config.decision_times;
    let ns = times.len();
    // time-change increments for each sub-step of each interval before t_{N-1}
    let mut intervals: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut prev = 0.0;
    for &t in times {
        let mut inc = Vec::new();
        if t > prev {
            let h = (t - prev) / substeps as f64;
            for s in 0..substeps {
                let a = prev + h * s as f64;
                let b = if s + 1 == substeps { t } else { a + h };
                inc.push(models::time_change(&params.rho, config.delivery, b)? - models::time_change(&params.rho, config.delivery, a)?);
            }
        }
        intervals.push(((t - prev) / substeps as f64, inc));
        prev = t;
    }
    let last_dt = config.delivery - times[ns - 1];
    let has_v = matches!(variant, ModelVariant::A);
    if let ModelVariant::B { sigma_m } = variant {
        if !(sigma_m > 0.0) {
            return Err(Error::invalid("model B needs sigma_m > 0"));
        }
    }
    let (mu, sig, lam) = (market.mu_s, market.sigma_s, market.lambda);
    let simulate_one = |p: usize| {
        let mut g = rng::stream(seed, p as u64);
        let mut row = PathRow { s: vec![0.0; ns], m: vec![0.0; ns], v: vec![0.0; ns], s_t: 0.0, m_t: 0.0 };
        let (mut ss, mut mm, mut vv) = (market.s0, model.m0, model.v0);
        for (i, (h, inc)) in intervals.iter().enumerate() {
            match variant {
                ModelVariant::A => {
                    for &dtheta in inc {
                        let z_m: f64 = StandardNormal.sample(&mut g);
                        let z_v: f64 = StandardNormal.sample(&mut g);
                        let z_p: f64 = StandardNormal.sample(&mut g);
                        (mm, vv) = models::step(ModelFamily::LogNig, model.b, mm, vv, dtheta, z_m, z_v);
                        ss += mu * h + sig * h.sqrt() * correlated(lam, z_m, z_p);
                    }
                }
                ModelVariant::B { sigma_m } => {
                    if !inc.is_empty() {
                        let dt = h * substeps as f64;
                        let z_m: f64 = StandardNormal.sample(&mut g);
                        let z_p: f64 = StandardNormal.sample(&mut g);
                        mm *= (sigma_m * dt.sqrt() * z_m - 0.5 * sigma_m * sigma_m * dt).exp();
                        ss += mu * dt + sig * dt.sqrt() * correlated(lam, z_m, z_p);
                    }
                }
            }
            row.s[i] = ss;
            row.m[i] = mm;
            row.v[i] = vv;
        }
        let z: f64 = StandardNormal.sample(&mut g);
        let z_p: f64 = StandardNormal.sample(&mut g);
        row.m_t = match variant {
            ModelVariant::A => laws::draw_terminal_given_normal(ModelFamily::LogNig, model.b, mm, vv, z, &mut g),
            ModelVariant::B { sigma_m } => mm * (sigma_m * last_dt.sqrt() * z - 0.5 * sigma_m * sigma_m * last_dt).exp(),
        };
        row.s_t = ss + mu * last_dt + sig * last_dt.sqrt() * correlated(lam, z, z_p);
        row
    };
    let rows: Vec<PathRow> = (0..n).into_par_iter().map(simulate_one).collect();
    let mut s = Vec::with_capacity(n * ns);
    let mut m = Vec::with_capacity(n * ns);
    let mut v = Vec::with_capacity(if has_v { n * ns } else { 0 });
    let mut s_t = Vec::with_capacity(n);
    let mut m_t = Vec::with_capacity(n);
    for r in rows {
        s.extend(r.s);
        m.extend(r.m);
        if has_v {
            v.extend(r.v);
        }
        s_t.push(r.s_t);
        m_t.push(r.m_t);
    }
    Ok(JointPaths { n_stages: ns, s, m, v, s_t, m_t })
}

/// Realized profit `f(m_T)S_T − Σ φᵢ ΔSᵢ − K|f(m_T) − φ_{N−1}|`.
pub fn profit(paths: &JointPaths, p: usize, positions: &[f64], config: &TradingConfig) -> f64 {
    let f = power_curve(paths.m_t[p], config.m_min, config.m_max);
    let intraday: f64 = positions.iter().enumerate().map(|(i, phi)| phi * paths.delta_s(p, i)).sum();
    f * paths.s_t[p] - intraday - config.k * (f - positions[positions.len() - 1]).abs()
}

/// Same profit from cash flows: intraday sales at each decision price, then
/// the residual volume settled at `S_T` with the penalty.
pub fn profit_from_cash_flows(paths: &JointPaths, p: usize, positions: &[f64], config: &TradingConfig) -> f64 {
    let n = paths.n_stages;
    let f = power_curve(paths.m_t[p], config.m_min, config.m_max);
    let mut cash = paths.s[p * n] * positions[0];
    for i in 1..n {
        cash += paths.s[p * n + i] * (positions[i] - positions[i - 1]);
    }
    let last = positions[n - 1];
    cash + paths.s_t[p] * (f - last) - config.k * (f - last).abs()
}

struct TradingProblem<'a> {
    paths: &'a JointPaths,
    dim: usize,
    config: &'a TradingConfig,
}

impl ControlProblem for TradingProblem<'_> {
    fn n_stages(&self) -> usize {
        self.paths.n_stages
    }
    fn n_paths(&self) -> usize {
        self.paths.n_paths()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn state(&self, stage: usize, p: usize, out: &mut [f64]) {
        state_of(self.paths, p, stage, out);
    }
    fn factor(&self, stage: usize, p: usize, phi: f64) -> f64 {
        let a = self.config.risk_aversion;
        let ds = self.paths.delta_s(p, stage);
        if stage + 1 < self.paths.n_stages {
            (a * phi * ds).exp()
        } else {
            let f = power_curve(self.paths.m_t[p], self.config.m_min, self.config.m_max);
            (a * (phi * ds - f * self.paths.s_t[p] + self.config.k * (f - phi).abs())).exp()
        }
    }
}

/// Writes the first `out.len()` state coordinates `(S, m, V)` of a path.
fn state_of(paths: &JointPaths, p: usize, stage: usize, out: &mut [f64]) {
    let k = p * paths.n_stages + stage;
    out[0] = paths.s[k];
    out[1] = paths.m[k];
    if out.len() > 2 {
        out[2] = paths.v[k];
    }
}

/// Trains feedback positions on `n_train` paths of `variant`.
pub fn train_policy(
    variant: ModelVariant,
    model: &ForecastModel,
    market: &MarketParams,
    config: &TradingConfig,
    lsmc_config: &LsmcConfig,
) -> Result<PolicyTable> {
    lsmc_config.validate(variant.dim())?;
    let paths = simulate_joint(variant, model, market, config, lsmc_config.substeps, lsmc_config.n_paths, lsmc_config.seed)?;
    let problem = TradingProblem { paths: &paths, dim: variant.dim(), config };
    lsmc::solve_backward(&problem, lsmc_config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfitStats {
    pub mean: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub n: usize,
}

impl ProfitStats {
    pub fn from_samples(x: &[f64]) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::invalid("profit statistics need at least two paths"));
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let stderr = (var / n).sqrt();
        Ok(ProfitStats { mean, stderr, ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr), n: x.len() })
    }
}

/// Positions chosen by `policy` along every test path (row-major, one row
/// per path). A two-dimensional policy sees `(S, m)` only.
pub fn policy_positions(policy: &PolicyTable, paths: &JointPaths) -> Result<Vec<f64>> {
    let ns = paths.n_stages;
    if policy.n_stages() != ns {
        return Err(Error::invalid(format!("policy has {} stages, paths have {ns}", policy.n_stages())));
    }
    if policy.dim == 3 && paths.v.is_empty() {
        return Err(Error::invalid("a three-dimensional policy needs paths with V"));
    }
    let d = policy.dim;
    let n = paths.n_paths();
    let mut pos = vec![0.0; n * ns];
    for i in 0..ns {
        let mut states = vec![0.0; n * d];
        states.par_chunks_mut(d).enumerate().for_each(|(p, x)| state_of(paths, p, i, x));
        for (p, c) in policy.controls_for(i, &states).into_iter().enumerate() {
            pos[p * ns + i] = c;
        }
    }
    Ok(pos)
}

/// Realized profits of `policy` on the test paths.
pub fn policy_profits(policy: &PolicyTable, paths: &JointPaths, config: &TradingConfig) -> Result<Vec<f64>> {
    let ns = paths.n_stages;
    let pos = policy_positions(policy, paths)?;
    Ok((0..paths.n_paths()).into_par_iter().map(|p| profit(paths, p, &pos[p * ns..(p + 1) * ns], config)).collect())
}

pub fn evaluate_policy(policy: &PolicyTable, paths: &JointPaths, config: &TradingConfig) -> Result<ProfitStats> {
    ProfitStats::from_samples(&policy_profits(policy, paths, config)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Price drifts for the relative-profit table, at the base `V₀`.
    pub mu_s: Vec<f64>,
    /// `V₀` levels for the uncertainty sweep.
    pub v0_levels: Vec<f64>,
    /// Drift held fixed during the uncertainty sweep.
    pub v0_sweep_mu_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub market: MarketParams,
    pub model: ForecastModel,
    pub trading: TradingConfig,
    pub cells_per_dim: usize,
    pub substeps: usize,
    pub sigma_m_rule: SigmaMRule,
    /// Overrides `sigma_m_rule` when set.
    #[serde(default)]
    pub sigma_m: Option<f64>,
    pub sweep: SweepConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    /// The reference desk-scale experiment.
    pub fn reference() -> Self {
        ExperimentConfig {
            market: MarketParams { s0: 40.0, mu_s: 0.0, sigma_s: 6.0, lambda: -0.08 },
            model: ForecastModel { m0: 5.38, v0: 0.032, b: 0.035, rho: 0.16 },
            trading: TradingConfig {
                risk_aversion: 0.01,
                k: 10.0,
                m_min: 3.3,
                m_max: 25.0,
                decision_times: vec![0.0, 6.0, 12.0, 18.0],
                delivery: 24.0,
                controls: None,
                n_train: 200_000,
                n_test: 100_000,
            },
            cells_per_dim: 15,
            substeps: 12,
            sigma_m_rule: SigmaMRule::RhoSqrtV0,
            sigma_m: None,
            sweep: SweepConfig { mu_s: vec![0.0, 0.5, -0.5], v0_levels: vec![0.016, 0.032, 0.064], v0_sweep_mu_s: 0.5 },
            seed: 2024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.trading.validate()?;
        self.model.params(self.trading.delivery)?;
        if self.sweep.mu_s.is_empty() && self.sweep.v0_levels.is_empty() {
            return Err(Error::invalid("the sweep has no points"));
        }
        if let Some(s) = self.sigma_m {
            if !(s > 0.0) {
                return Err(Error::invalid("sigma_m must be > 0"));
            }
        }
        let grid = self.trading.control_grid(self.market.mu_s)?;
        LsmcConfig { n_paths: self.trading.n_train, cells_per_dim: self.cells_per_dim, control_grid: grid, substeps: self.substeps, seed: 0 }
            .validate(ModelVariant::A.dim())
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(s).map_err(|e| Error::invalid(format!("bad experiment config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize experiment config: {e}")))
    }

    pub fn sigma_m_for(&self, model: &ForecastModel) -> f64 {
        self.sigma_m.unwrap_or_else(|| self.sigma_m_rule.sigma_m(model))
    }

    fn lsmc_config(&self, n_paths: usize, mu_s: f64, seed: u64) -> Result<LsmcConfig> {
        Ok(LsmcConfig {
            n_paths,
            cells_per_dim: self.cells_per_dim,
            control_grid: self.trading.control_grid(mu_s)?,
            substeps: self.substeps,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mu_s: f64,
    pub v0: f64,
    pub a: ProfitStats,
    pub b: ProfitStats,
    /// `100·(A − B)/B` of the mean profits.
    pub relative_pct: f64,
    /// Paired standard error of the mean profit difference.
    pub diff_stderr: f64,
    pub significant: bool,
}

/// One sweep point: train A and B, evaluate both on the same model-A test
/// paths, and test the paired profit difference at 95%.
pub struct PointOutcome {
    pub point: SweepPoint,
    pub policy_a: PolicyTable,
    pub policy_b: PolicyTable,
}

pub fn run_point(config: &ExperimentConfig, mu_s: f64, v0: f64, salt: u64) -> Result<PointOutcome> {
    let market = MarketParams { mu_s, ..config.market };
    let model = ForecastModel { v0, ..config.model };
    let t = &config.trading;
    let seed = rng::derive_seed(config.seed, salt);
    let cfg_a = config.lsmc_config(t.n_train, mu_s, rng::derive_seed(seed, 1))?;
    let cfg_b = config.lsmc_config(t.n_train, mu_s, rng::derive_seed(seed, 2))?;
    let policy_a = train_policy(ModelVariant::A, &model, &market, t, &cfg_a)?;
    let variant_b = ModelVariant::B { sigma_m: config.sigma_m_for(&model) };
    let policy_b = train_policy(variant_b, &model, &market, t, &cfg_b)?;
    let test = simulate_joint(ModelVariant::A, &model, &market, t, config.substeps, t.n_test, rng::derive_seed(seed, 3))?;
    let pa = policy_profits(&policy_a, &test, t)?;
    let pb = policy_profits(&policy_b, &test, t)?;
    let a = ProfitStats::from_samples(&pa)?;
    let b = ProfitStats::from_samples(&pb)?;
    let diff: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
    let d = ProfitStats::from_samples(&diff)?;
    let point = SweepPoint {
        mu_s,
        v0,
        a,
        b,
        relative_pct: 100.0 * (a.mean - b.mean) / b.mean,
        diff_stderr: d.stderr,
        significant: d.mean.abs() > 1.96 * d.stderr,
    };
    Ok(PointOutcome { point, policy_a, policy_b })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub by_drift: Vec<SweepPoint>,
    pub by_uncertainty: Vec<SweepPoint>,
}

// Every sweep point reuses the same streams: differences between points are
// then not buried under fresh Monte Carlo noise.
const POINT_SALT: u64 = 100;

/// The drift table at the base `V₀` and the `V₀` sweep at fixed drift. The
/// trained policies of every point are passed to `keep` as they are made.
pub fn compare_models<F>(config: &ExperimentConfig, mut keep: F) -> Result<Comparison>
where
    F: FnMut(&str, &PointOutcome) -> Result<()>,
{
    config.validate()?;
    let mut out = Comparison { by_drift: Vec::new(), by_uncertainty: Vec::new() };
    for (k, &mu) in config.sweep.mu_s.iter().enumerate() {
        let o = run_point(config, mu, config.model.v0, POINT_SALT)?;
        keep(&format!("drift{k}"), &o)?;
        out.by_drift.push(o.point);
    }
    for (k, &v0) in config.sweep.v0_levels.iter().enumerate() {
        let o = run_point(config, config.sweep.v0_sweep_mu_s, v0, POINT_SALT)?;
        keep(&format!("uncertainty{k}"), &o)?;
        out.by_uncertainty.push(o.point);
    }
    Ok(out)
}

/// `sweep_point,mu_s,v0,model,mean,stderr,ci_low,ci_high,relative_pct,significant`
pub fn write_results_csv<W: Write>(points: &[SweepPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sweep_point", "mu_s", "v0", "model", "mean", "stderr", "ci_low", "ci_high", "relative_pct", "significant"])?;
    for (k, pt) in points.iter().enumerate() {
        for (name, s) in [("A", &pt.a), ("B", &pt.b)] {
            out.write_record([
                k.to_string(),
                pt.mu_s.to_string(),
                pt.v0.to_string(),
                name.to_string(),
                format!("{}", s.mean),
                format!("{}", s.stderr),
                format!("{}", s.ci95.0),
                format!("{}", s.ci95.1),
                format!("{}", pt.relative_pct),
                pt.significant.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
