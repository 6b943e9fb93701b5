//! Acceptance criteria, one verdict line each.
//!
//! Every criterion runs at its stated size and tolerance and prints
//! `criterion N: PASS|FAIL ...` to stderr (unbuffered, so the lines show up
//! without `--nocapture`). A FAIL verdict does not fail the test unless
//! `ACCEPTANCE_STRICT=1`; errors while computing a criterion always do.
//! `ACCEPTANCE_ONLY=4,8` restricts the run to some criteria.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use forecast_dynamics::calibration::{
    self, emos_predictive, ensemble_stats, generate_synthetic, recovery_report, CalibrationConfig, RhoAveraging,
    SyntheticConfig, SyntheticData,
};
use forecast_dynamics::dataio::{Dataset, EnsembleRecord};
use forecast_dynamics::lsmc::{LsmcConfig, PolicyTable};
use forecast_dynamics::models::{
    draw_terminal, log_density, nig_log_pdf, predictive_cdf, predictive_density, sample_terminal,
    simulate_paths, v_from_sigma2, ForecastState, ModelFamily, ModelParams, NigCanonical, RhoSchedule,
};
use forecast_dynamics::numerics::{chi_square_uniform, integrate_line};
use forecast_dynamics::rng;
use forecast_dynamics::scoring::{self, crps_ensemble, crps_parametric, pit_histogram, ScoreConfig};
use forecast_dynamics::trading::{
    self, compare_models, power_curve, simulate_joint, train_policy, ExperimentConfig, ForecastModel, MarketParams,
    ModelVariant, TradingConfig,
};

struct Verdict {
    id: String,
    pass: bool,
    detail: String,
}

fn say(line: &str) {
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "{line}");
}

fn verdict(id: &str, pass: bool, detail: String) -> Verdict {
    say(&format!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" }));
    Verdict { id: id.into(), pass, detail }
}

/// Extra measurements that are not verdicts.
fn note(id: &str, detail: String) {
    say(&format!("  note {id}: {detail}"));
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn params(family: ModelFamily, b: f64, delivery: f64) -> ModelParams {
    ModelParams::new(family, b, RhoSchedule::constant(0.16), delivery).unwrap()
}

// ---------------------------------------------------------------- 1

fn density_normalization() -> Vec<Verdict> {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    for family in ModelFamily::ALL {
        for b in [0.035, 0.719] {
            for v in [0.01, 0.032, 1.0, 5.0] {
                let ms: &[f64] = if family.is_positive() { &[5.38] } else { &[0.0, 5.38] };
                for &m in ms {
                    let p = params(family, b, 48.0);
                    let s = ForecastState::new(0.0, m, v);
                    let mass = if family.is_positive() {
                        // x = e^y, dx = e^y dy
                        integrate_line(
                            |y| {
                                let x = y.exp();
                                if x > 0.0 && x.is_finite() {
                                    (log_density(&p, &s, x).unwrap() + y).exp()
                                } else {
                                    0.0
                                }
                            },
                            m.ln(),
                            v.sqrt(),
                            1e-11,
                        )
                    } else {
                        integrate_line(|x| predictive_density(&p, &s, x).unwrap(), m, v.sqrt(), 1e-11)
                    }
                    .unwrap()
                    .value;
                    count += 1;
                    let err = (mass - 1.0).abs();
                    if err >= worst.0 {
                        worst = (err, format!("{family} b={b} V={v} m={m}"));
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    let pass = worst.0 < 1e-8 && t < Duration::from_secs(60);
    vec![verdict(
        "1",
        pass,
        format!("{count} densities, max |mass-1| = {:.2e} at {} (tol 1e-8), runtime {}", worst.0, worst.1, secs(t)),
    )]
}

// ---------------------------------------------------------------- 2

fn martingale_and_moments() -> Vec<Verdict> {
    let start = Instant::now();
    let n = 100_000;
    let delivery = 24.0;
    let mut ok = true;
    let mut parts = Vec::new();
    for (family, b, m0, v0) in [
        (ModelFamily::StudentT, 0.719, 0.0, 1.0),
        (ModelFamily::Nig, 0.719, 0.0, 1.0),
        (ModelFamily::LogGh, 0.035, 5.38, 0.032),
        (ModelFamily::LogNig, 0.035, 5.38, 0.032),
    ] {
        let p = params(family, b, delivery);
        let paths = simulate_paths(&p, ForecastState::new(0.0, m0, v0), &[12.0, 21.0], n, 50, 11).unwrap();
        // the delivered value: an exact predictive draw from the last state
        let x: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let s = paths.state(i, 1);
                draw_terminal(family, b, s.m, s.v, &mut rng::stream(12, i as u64))
            })
            .collect();
        let (mean, se) = mean_se(&x);
        let z_mean = (mean - m0) / se;
        ok &= z_mean.abs() < 3.0;
        let mut part = format!("{family}: mean z={z_mean:+.2}");
        match family {
            ModelFamily::Nig => {
                let dev: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
                let (var, se_var) = mean_se(&dev);
                let z = (var - v0) / se_var;
                ok &= z.abs() < 3.0;
                part += &format!(", var z={z:+.2}");
            }
            ModelFamily::LogNig => {
                let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
                let (m2, se2) = mean_se(&sq);
                let z = (m2 - m0 * m0 * v0.exp()) / se2;
                ok &= z.abs() < 3.0;
                part += &format!(", E[m_T^2] z={z:+.2}");
            }
            _ => {}
        }
        parts.push(part);
    }
    let t = start.elapsed();
    let pass = ok && t < Duration::from_secs(120);
    vec![verdict("2", pass, format!("{n} paths per family; {}; runtime {}", parts.join("; "), secs(t)))]
}

// ---------------------------------------------------------------- 3

fn characteristic_function() -> Vec<Verdict> {
    let n = 1_000_000;
    let mut ok = true;
    let mut parts = Vec::new();
    for (b, v) in [(0.719, 1.0), (0.035, 1.0)] {
        let p = params(ModelFamily::Nig, b, 48.0);
        let x = sample_terminal(&p, &ForecastState::new(0.0, 0.0, v), n, 31).unwrap();
        for u in [0.5, 1.0, 2.0] {
            let expect = (-v * ((1.0 + u * u * b * b).sqrt() - 1.0) / (b * b)).exp();
            let cos: Vec<f64> = x.iter().map(|t| (u * t).cos()).collect();
            let sin: Vec<f64> = x.iter().map(|t| (u * t).sin()).collect();
            let (re, se_re) = mean_se(&cos);
            let (im, se_im) = mean_se(&sin);
            let (z_re, z_im) = ((re - expect) / se_re, im / se_im);
            ok &= z_re.abs() < 3.0 && z_im.abs() < 3.0;
            parts.push(format!("b={b} u={u}: z_re={z_re:+.2} z_im={z_im:+.2}"));
        }
    }
    vec![verdict("3", ok, format!("{n} exact draws; {}", parts.join("; ")))]
}

// ---------------------------------------------------------------- 4

/// CRPS of a NIG law by brute force: the CDF and the survival function are
/// accumulated with the trapezoid rule on a fine grid split at `y`.
fn crps_nig_grid(c: &NigCanonical, y: f64) -> f64 {
    let sd = c.variance().sqrt();
    let mean = c.mean();
    let reach = (45.0 / (c.alpha - c.beta.abs())).max(40.0 * sd);
    let (lo, hi) = ((mean - reach).min(y - 1.0), (mean + reach).max(y + 1.0));
    let h_target = c.delta.min(sd) / 200.0;
    let side = |a: f64, b: f64| -> (Vec<f64>, f64) {
        let k = ((b - a) / h_target).ceil() as usize;
        let h = (b - a) / k as f64;
        let dens: Vec<f64> = (0..=k).into_par_iter().map(|i| nig_log_pdf(c, a + h * i as f64).exp()).collect();
        (dens, h)
    };
    // left of y: ∫ F², F accumulated from lo
    let (dl, hl) = side(lo, y);
    let mut f = 0.0;
    let mut left = 0.0;
    let mut prev_f2 = 0.0;
    for w in dl.windows(2) {
        f += 0.5 * hl * (w[0] + w[1]);
        left += 0.5 * hl * (prev_f2 + f * f);
        prev_f2 = f * f;
    }
    // right of y: ∫ (1 − F)², the survival accumulated from hi
    let (dr, hr) = side(y, hi);
    let mut g = 0.0;
    let mut right = 0.0;
    let mut prev_g2 = 0.0;
    for w in dr.windows(2).rev() {
        g += 0.5 * hr * (w[0] + w[1]);
        right += 0.5 * hr * (prev_g2 + g * g);
        prev_g2 = g * g;
    }
    left + right
}

/// Ensemble CRPS by integrating the squared distance between the empirical
/// CDF and the step at `y` exactly, interval by interval.
fn crps_ensemble_brute(members: &[f64], y: f64) -> f64 {
    let mut pts: Vec<f64> = members.to_vec();
    pts.push(y);
    pts.sort_by(f64::total_cmp);
    let m = members.len() as f64;
    let mut total = 0.0;
    for w in pts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let f = members.iter().filter(|&&x| x <= mid).count() as f64 / m;
        let h = if mid >= y { 1.0 } else { 0.0 };
        total += (f - h).powi(2) * (w[1] - w[0]);
    }
    total
}

fn crps_cross_validation() -> Vec<Verdict> {
    let mut g = rng::stream(41, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let alpha = g.random_range(0.5..5.0);
        let beta = alpha * g.random_range(-0.8..0.8);
        let delta = g.random_range(0.2..3.0);
        let mu = g.random_range(-2.0..2.0);
        let c = NigCanonical::new(alpha, beta, delta, mu).unwrap();
        let y = c.mean() + c.variance().sqrt() * g.random_range(-3.0..3.0);
        let fast = crps_parametric(&c, y, 1e-6).unwrap();
        worst = worst.max((fast - crps_nig_grid(&c, y)).abs());
    }
    let a = verdict("4a", worst < 1e-4, format!("20 random NIG laws, max |Plancherel - grid oracle| = {worst:.2e} (tol 1e-4)"));

    let mut worst_e = 0.0f64;
    for _ in 0..100 {
        let k = g.random_range(1..12);
        let members: Vec<f64> = (0..k).map(|_| g.random_range(-5.0..5.0)).collect();
        let y = g.random_range(-6.0..6.0);
        worst_e = worst_e.max((crps_ensemble(&members, y) - crps_ensemble_brute(&members, y)).abs());
    }
    let b = verdict("4b", worst_e < 1e-10, format!("100 random ensembles, max |closed form - brute force| = {worst_e:.2e} (tol 1e-10)"));
    vec![a, b]
}

// ---------------------------------------------------------------- 5–7

struct Generated {
    name: &'static str,
    truth: SyntheticConfig,
    data: SyntheticData,
    generate_time: Duration,
}

fn generate(name: &'static str, truth: SyntheticConfig) -> Generated {
    let start = Instant::now();
    let data = generate_synthetic(&truth).unwrap();
    Generated { name, truth, data, generate_time: start.elapsed() }
}

fn calibration_config(truth: &SyntheticConfig, averaging: RhoAveraging) -> CalibrationConfig {
    let mut c = CalibrationConfig::new(truth.family);
    c.horizons = truth.coefficients.iter().map(|k| k.horizon_h).collect();
    c.mean_scale = truth.mean_scale;
    c.rho_averaging = averaging;
    c.seed = truth.seed;
    c
}

fn recovery(sets: &[Generated]) -> Vec<Verdict> {
    let mut ok = true;
    let mut total = Duration::ZERO;
    let mut parts = Vec::new();
    for g in sets {
        let start = Instant::now();
        let result = calibration::calibrate(&g.data.dataset, &calibration_config(&g.truth, RhoAveraging::PerRecord)).unwrap();
        let t = start.elapsed() + g.generate_time;
        total += t;
        let rows = recovery_report(&g.truth, &result);
        let failed: Vec<String> = rows
            .iter()
            .filter(|r| !r.pass())
            .map(|r| format!("{} {:.4} vs {} ({:+.0}%)", r.parameter, r.estimate, r.truth, 100.0 * (r.estimate - r.truth) / r.truth))
            .collect();
        ok &= failed.is_empty();
        parts.push(format!(
            "{}: {}/{} within tolerance{}",
            g.name,
            rows.len() - failed.len(),
            rows.len(),
            if failed.is_empty() { String::new() } else { format!(" [outside: {}]", failed.join(", ")) }
        ));
    }
    let pass = ok && total < Duration::from_secs(600);
    let v = verdict("5", pass, format!("{}; runtime {}", parts.join("; "), secs(total)));

    // pooled rho averaging for the positive family, for comparison
    if let Some(g) = sets.iter().find(|g| g.truth.family.is_positive()) {
        let result = calibration::calibrate(&g.data.dataset, &calibration_config(&g.truth, RhoAveraging::Pooled)).unwrap();
        let rows = recovery_report(&g.truth, &result);
        let failed: Vec<&str> = rows.iter().filter(|r| !r.pass()).map(|r| r.parameter.as_str()).collect();
        note("5", format!("{} with pooled rho averaging: {}/{} within tolerance, outside: {:?}", g.name, rows.len() - failed.len(), rows.len(), failed));
    }
    vec![v]
}

fn pit_under_truth(g: &Generated) -> Vec<(u32, f64, usize)> {
    let truth = &g.truth;
    let p = ModelParams::new(truth.family, truth.b, truth.rho.clone(), 100.0).unwrap();
    truth
        .coefficients
        .iter()
        .map(|k| {
            let records = g.data.dataset.records(k.horizon_h);
            let pit: Vec<f64> = records
                .par_iter()
                .map(|r| {
                    let (mean, spread) = ensemble_stats(&r.members).unwrap();
                    let (m, s2) = emos_predictive(k, mean, spread);
                    let v = v_from_sigma2(truth.family, m, s2).unwrap();
                    predictive_cdf(&p, &ForecastState::new(0.0, m, v), r.realization.unwrap(), 1e-9).unwrap()
                })
                .collect();
            (k.horizon_h, pit_histogram(&pit, 20).unwrap().ks_pvalue, pit.len())
        })
        .collect()
}

fn exchangeable_ranks(family: ModelFamily, b: f64, n: usize, members: usize) -> (Vec<u64>, f64) {
    let p = params(family, b, 48.0);
    let t0 = forecast_dynamics::dataio::parse_time("2020-01-01T00:00:00Z").unwrap();
    let records: Vec<EnsembleRecord> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(61, i as u64);
            let (m, v) = if family.is_positive() {
                (g.random_range(1.0..20.0), g.random_range(0.01..0.5))
            } else {
                (g.random_range(-10.0..10.0), g.random_range(0.5..5.0))
            };
            let mut draws = sample_terminal(&p, &ForecastState::new(0.0, m, v), members + 1, i as u64).unwrap();
            let y = draws.pop();
            EnsembleRecord { issue_time: t0, horizon_h: 24, location: format!("s{i}"), members: draws, realization: y }
        })
        .collect();
    let counts = scoring::rank_histogram(&records, 62).unwrap();
    let (_, pvalue) = chi_square_uniform(&counts).unwrap();
    (counts, pvalue)
}

fn calibration_under_truth(sets: &[Generated]) -> Vec<Verdict> {
    let mut ok = true;
    let mut parts = Vec::new();
    for g in sets {
        for (h, pv, n) in pit_under_truth(g) {
            ok &= pv >= 0.01;
            parts.push(format!("{} {h}h p={pv:.3} (n={n})", g.name));
        }
    }
    let a = verdict("6a", ok, format!("PIT under the generating parameters, KS at 1%: {}", parts.join(", ")));

    let mut ok = true;
    let mut parts = Vec::new();
    for (family, b) in [(ModelFamily::Nig, 0.719), (ModelFamily::LogNig, 0.035)] {
        let (_, pv) = exchangeable_ranks(family, b, 10_000, 20);
        ok &= pv >= 0.01;
        parts.push(format!("{family} p={pv:.3}"));
    }
    let b = verdict("6b", ok, format!("Talagrand histogram of 10000 exchangeable 20-member ensembles, chi-square at 1%: {}", parts.join(", ")));
    vec![a, b]
}

fn issue_times(d: &Dataset) -> Vec<chrono::DateTime<chrono::Utc>> {
    let set: BTreeSet<_> = d.horizons().iter().flat_map(|&h| d.records(h).iter().map(|r| r.issue_time)).collect();
    set.into_iter().collect()
}

fn postprocessing_improves_crps(sets: &[Generated]) -> Vec<Verdict> {
    let mut ok = true;
    let mut parts = Vec::new();
    for g in sets {
        let times = issue_times(&g.data.dataset);
        let split = times.len() * 2 / 3;
        let train = g.data.dataset.filter_issue_times(times[0], times[split - 1]);
        let test = g.data.dataset.filter_issue_times(times[split], *times.last().unwrap());
        let cal = calibration::calibrate(&train, &calibration_config(&g.truth, RhoAveraging::PerRecord)).unwrap();
        let report = scoring::score_dataset(&test, &cal, &ScoreConfig::default()).unwrap();
        for h in &report.horizons {
            let model = h.crps_model.unwrap();
            ok &= model < h.crps_raw;
            parts.push(format!("{} {}h raw {:.4} model {:.4}", g.name, h.horizon_h, h.crps_raw, model));
        }
    }
    vec![verdict("7", ok, format!("calibrated on the first 2/3 of issue times, scored on the rest: {}", parts.join("; ")))]
}

// ---------------------------------------------------------------- 8

fn reference_model() -> ForecastModel {
    ExperimentConfig::reference().model
}

/// States at the last decision of `n` fresh paths.
fn probe_states(variant: ModelVariant, market: &MarketParams, config: &TradingConfig, n: usize) -> Vec<Vec<f64>> {
    let paths = simulate_joint(variant, &reference_model(), market, config, 12, n, 808).unwrap();
    let ns = paths.n_stages;
    (0..n)
        .map(|p| {
            let k = p * ns + ns - 1;
            let mut x = vec![paths.s[k], paths.m[k]];
            if variant.dim() == 3 {
                x.push(paths.v[k]);
            }
            x
        })
        .collect()
}

/// Draws of `f(m_T)` given the state at the last decision.
fn terminal_production(variant: ModelVariant, state: &[f64], config: &TradingConfig, n: usize, seed: u64) -> Vec<f64> {
    let model = reference_model();
    let dt = config.delivery - config.decision_times[config.decision_times.len() - 1];
    (0..n)
        .map(|i| {
            let mut g = rng::stream(seed, i as u64);
            let m_t = match variant {
                ModelVariant::A => draw_terminal(ModelFamily::LogNig, model.b, state[1], state[2], &mut g),
                ModelVariant::B { sigma_m } => {
                    let z: f64 = StandardNormal.sample(&mut g);
                    state[1] * (sigma_m * dt.sqrt() * z - 0.5 * sigma_m * sigma_m * dt).exp()
                }
            };
            power_curve(m_t, config.m_min, config.m_max)
        })
        .collect()
}

fn grid_argmin(grid: &[f64], objective: impl Fn(f64) -> f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0f64);
    for &phi in grid {
        let j = objective(phi);
        // ties to the smallest |φ|, as in the solver
        if j < best.0 * (1.0 - 1e-12) || ((j - best.0).abs() <= 1e-12 * best.0.abs() && phi.abs() < best.1.abs()) {
            best = (j, phi);
        }
    }
    best.1
}

fn lsmc_config(config: &TradingConfig, mu_s: f64, seed: u64) -> LsmcConfig {
    let e = ExperimentConfig::reference();
    LsmcConfig {
        n_paths: config.n_train,
        cells_per_dim: e.cells_per_dim,
        control_grid: config.control_grid(mu_s).unwrap(),
        substeps: e.substeps,
        seed,
    }
}

fn trained(variant: ModelVariant, market: &MarketParams, config: &TradingConfig, seed: u64) -> PolicyTable {
    train_policy(variant, &reference_model(), market, config, &lsmc_config(config, market.mu_s, seed)).unwrap()
}

fn lsmc_degenerate() -> Vec<Verdict> {
    let e = ExperimentConfig::reference();
    let sigma_m = e.sigma_m_for(&e.model);
    let variants = [ModelVariant::A, ModelVariant::B { sigma_m }];
    let step = 0.01 + 1e-9;
    let n_oracle = 100_000;

    // (a) no price risk: only the imbalance penalty shapes the last position
    let market = MarketParams { sigma_s: 0.0, mu_s: 0.0, ..e.market };
    let config = e.trading.clone();
    let grid = config.control_grid(0.0).unwrap();
    let alpha = config.risk_aversion;
    let last = config.n_stages() - 1;
    let mut ok = true;
    let mut parts = Vec::new();
    let mut exact_parts = Vec::new();
    for (vi, &variant) in variants.iter().enumerate() {
        let policy = trained(variant, &market, &config, 880 + vi as u64);
        let probes = probe_states(variant, &market, &config, 50);
        let rows: Vec<(f64, f64, f64)> = probes
            .par_iter()
            .enumerate()
            .map(|(j, x)| {
                let f = terminal_production(variant, x, &config, n_oracle, 9000 + j as u64);
                let penalty = |phi: f64| f.iter().map(|&fm| (alpha * config.k * (fm - phi).abs()).exp()).sum::<f64>();
                let full = |phi: f64| {
                    f.iter().map(|&fm| (alpha * (config.k * (fm - phi).abs() - fm * x[0])).exp()).sum::<f64>()
                };
                (policy.control(last, x), grid_argmin(&grid, penalty), grid_argmin(&grid, full))
            })
            .collect();
        let dev = rows.iter().map(|r| (r.0 - r.1).abs()).fold(0.0, f64::max);
        let dev_exact = rows.iter().map(|r| (r.0 - r.2).abs()).fold(0.0, f64::max);
        let within = rows.iter().filter(|r| (r.0 - r.1).abs() <= step).count();
        ok &= within == rows.len();
        parts.push(format!("model {}: {within}/50 within one step, max deviation {dev:.3}", variant.name()));
        exact_parts.push(format!("model {}: max deviation {dev_exact:.3}", variant.name()));
    }
    let a = verdict(
        "8a",
        ok,
        format!("sigma_S = 0, mu_S = 0, last-stage policy vs brute-force argmin of E[exp(aK|f(m_T)-phi|)]: {}", parts.join("; ")),
    );
    note("8a", format!("against the full last-stage objective E[exp(a(K|f-phi| - f S_T))]: {}", exact_parts.join("; ")));

    // (b) no imbalance penalty, no drift, no price–forecast correlation
    let market = MarketParams { mu_s: 0.0, lambda: 0.0, ..e.market };
    let config = TradingConfig { k: 0.0, ..e.trading.clone() };
    let mut ok = true;
    let mut parts = Vec::new();
    let mut hedge = Vec::new();
    for (vi, &variant) in variants.iter().enumerate() {
        let policy = trained(variant, &market, &config, 890 + vi as u64);
        let paths = simulate_joint(variant, &reference_model(), &market, &config, 12, 50, 809).unwrap();
        let pos = trading::policy_positions(&policy, &paths).unwrap();
        let dev = pos.iter().map(|p| p.abs()).fold(0.0, f64::max);
        let within = pos.iter().filter(|p| p.abs() <= step).count();
        ok &= within == pos.len();
        parts.push(format!("model {}: {within}/{} positions within one step of 0, max |phi| {dev:.3}", variant.name(), pos.len()));

        // the last stage minimizes E[exp(a((phi - f) dS - f S))] with dS independent of f
        let probes = probe_states(variant, &market, &config, 50);
        let dt = config.delivery - config.decision_times[last];
        let c = 0.5 * alpha * alpha * market.sigma_s * market.sigma_s * dt;
        let devs: Vec<(f64, f64)> = probes
            .par_iter()
            .enumerate()
            .map(|(j, x)| {
                let f = terminal_production(variant, x, &config, n_oracle, 9100 + j as u64);
                let obj = |phi: f64| f.iter().map(|&fm| (c * (phi - fm).powi(2) - alpha * fm * x[0]).exp()).sum::<f64>();
                let (trained, best) = (policy.control(last, x), grid_argmin(&grid, obj));
                ((trained - best).abs(), obj(trained) / obj(best) - 1.0)
            })
            .collect();
        hedge.push(format!(
            "model {}: max deviation {:.3}, max relative objective excess {:.1e}",
            variant.name(),
            devs.iter().map(|d| d.0).fold(0.0, f64::max),
            devs.iter().map(|d| d.1).fold(0.0, f64::max)
        ));
    }
    let b = verdict("8b", ok, format!("K = 0, mu_S = 0, lambda = 0, all stages on 50 paths: {}", parts.join("; ")));
    note("8b", format!("the position that minimizes the last-stage objective hedges production (phi ~ f(m)); trained vs brute force: {}", hedge.join("; ")));
    vec![a, b]
}

// ---------------------------------------------------------------- 9–10

fn trading_tables() -> Vec<Verdict> {
    let start = Instant::now();
    let config = ExperimentConfig::reference();
    let result = compare_models(&config, |_, _| Ok(())).unwrap();
    let t = start.elapsed();

    let mut ok = true;
    let mut parts = Vec::new();
    for p in &result.by_drift {
        let z = (p.a.mean - p.b.mean) / p.diff_stderr;
        if p.mu_s != 0.0 {
            ok &= p.significant && p.relative_pct >= 1.0 && p.relative_pct <= 10.0;
        }
        parts.push(format!(
            "mu_S={:+}: A {:.3}, B {:.3}, {:+.2}% (z={z:+.2}{})",
            p.mu_s,
            p.a.mean,
            p.b.mean,
            p.relative_pct,
            if p.significant { ", significant" } else { "" }
        ));
    }
    ok &= t < Duration::from_secs(3600);
    let n = &config.trading;
    let nine = verdict(
        "9",
        ok,
        format!("n_train={} n_test={} cells={}^3: {}; runtime {}", n.n_train, n.n_test, config.cells_per_dim, parts.join("; "), secs(t)),
    );

    let pts = &result.by_uncertainty;
    let falls = |mean: &dyn Fn(usize) -> f64| (1..pts.len()).all(|k| mean(k) <= mean(k - 1));
    let ok = falls(&|k| pts[k].a.mean) && falls(&|k| pts[k].b.mean);
    let show = |mean: &dyn Fn(usize) -> f64| (0..pts.len()).map(|k| format!("{:.3}", mean(k))).collect::<Vec<_>>().join(", ");
    let ten = verdict(
        "10",
        ok,
        format!(
            "mu_S={:+}, V0 = {:?}: A {}, B {} (each required non-increasing)",
            config.sweep.v0_sweep_mu_s,
            config.sweep.v0_levels,
            show(&|k| pts[k].a.mean),
            show(&|k| pts[k].b.mean)
        ),
    );
    vec![nine, ten]
}

// ----------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let only: Option<BTreeSet<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let run = |k: u32| only.as_ref().is_none_or(|set| set.contains(&k));
    let mut all = Vec::new();
    if run(1) {
        all.extend(density_normalization());
    }
    if run(2) {
        all.extend(martingale_and_moments());
    }
    if run(3) {
        all.extend(characteristic_function());
    }
    if run(4) {
        all.extend(crps_cross_validation());
    }
    if run(5) || run(6) || run(7) {
        let sets = [
            generate("wind", SyntheticConfig::wind_reference()),
            generate("temperature", SyntheticConfig::temperature_reference()),
        ];
        if run(5) {
            all.extend(recovery(&sets));
        }
        if run(6) {
            all.extend(calibration_under_truth(&sets));
        }
        if run(7) {
            all.extend(postprocessing_improves_crps(&sets));
        }
    }
    if run(8) {
        all.extend(lsmc_degenerate());
    }
    if run(9) || run(10) {
        all.extend(trading_tables());
    }
    let passed = all.iter().filter(|v| v.pass).count();
    say(&format!("acceptance: {passed}/{} PASS", all.len()));
    if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        let failed: Vec<String> = all.iter().filter(|v| !v.pass).map(|v| format!("{}: {}", v.id, v.detail)).collect();
        assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
    }
}
