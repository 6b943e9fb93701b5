use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use forecast_dynamics::calibration::{
    self, recovery_report, CalibrationConfig, CalibrationResult, SyntheticConfig,
};
use forecast_dynamics::dataio::{self, Dataset, Variable};
use forecast_dynamics::models::{self, ForecastState, ModelFamily, ModelParams, RhoSchedule};
use forecast_dynamics::scoring::{self, ScoreConfig};
use forecast_dynamics::trading::{self, ExperimentConfig};

use crate::manifest::ManifestBuilder;
use crate::{CalibrateArgs, RecoverArgs, RecoverScale, ScoreArgs, SimulateArgs, TradeArgs};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn default_family(variable: Variable) -> ModelFamily {
    match variable {
        Variable::Temperature => ModelFamily::Nig,
        Variable::WindSpeed | Variable::LogWindSpeed => ModelFamily::LogNig,
    }
}

fn load_dataset(ensembles: &Path, realizations: &Path, variable: Variable) -> Result<Dataset> {
    let (dataset, report) = Dataset::load(ensembles, realizations, variable)?;
    info!("joined {} records ({} forecasts without a realization dropped)", report.joined, report.dropped);
    Ok(dataset)
}

fn write_diagnostics(result: &CalibrationResult, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "horizon_h,n_records,loglik_step1,loglik_shared,iterations,converged")?;
    for d in &result.diagnostics.per_horizon {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            d.horizon_h, d.n_records, d.loglik_step1, d.loglik_shared, d.iterations, d.converged
        )?;
    }
    w.flush()?;
    Ok(())
}

fn save_calibration(result: &CalibrationResult, out: &Path, manifest: &mut ManifestBuilder) -> Result<()> {
    fs::write(out, result.to_toml()?).with_context(|| format!("cannot write {}", out.display()))?;
    manifest.output(out);
    let diag = sibling(out, "_diagnostics.csv");
    write_diagnostics(result, &diag)?;
    manifest.output(&diag);
    Ok(())
}

pub fn calibrate(a: CalibrateArgs) -> Result<()> {
    let variable: Variable = a.variable.parse()?;
    let mut manifest = ManifestBuilder::new("calibrate");
    let mut config = match &a.config {
        Some(p) => {
            manifest.config(p)?;
            toml::from_str::<CalibrationConfig>(&read_text(p)?).with_context(|| format!("bad calibration config {}", p.display()))?
        }
        None => CalibrationConfig::new(default_family(variable)),
    };
    if let Some(f) = &a.family {
        config.family = f.parse()?;
    } else if a.config.is_none() {
        config.family = default_family(variable);
    }
    if let Some(s) = a.mean_scale {
        config.mean_scale = s.into();
    }
    if let Some(r) = a.rho_averaging {
        config.rho_averaging = r.into();
    }
    if let Some(h) = a.horizons {
        config.horizons = h;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    manifest.seed(config.seed);
    manifest.input(&a.ensembles)?;
    manifest.input(&a.realizations)?;
    let dataset = load_dataset(&a.ensembles, &a.realizations, variable)?;
    info!("calibrating {} on {} records", config.family, dataset.len());
    let result = calibration::calibrate(&dataset, &config)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_calibration(&result, &a.out, &mut manifest)?;
    info!("shared b = {:.4}, rho = {:?}", result.shared_b, result.rho.values);
    manifest.write(&sibling(&a.out, ".manifest.toml"))
}

fn parse_time_arg(s: &Option<String>) -> Result<Option<chrono::DateTime<chrono::Utc>>> {
    s.as_deref()
        .map(|t| dataio::parse_time(t).map_err(|e| anyhow::anyhow!("bad time '{t}': {e}")))
        .transpose()
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let variable: Variable = a.variable.parse()?;
    let mut manifest = ManifestBuilder::new("score");
    manifest.seed(a.seed);
    manifest.input(&a.ensembles)?;
    manifest.input(&a.realizations)?;
    let mut dataset = load_dataset(&a.ensembles, &a.realizations, variable)?;
    let (from, to) = (parse_time_arg(&a.from)?, parse_time_arg(&a.to)?);
    if from.is_some() || to.is_some() {
        let lo = from.unwrap_or(chrono::DateTime::<chrono::Utc>::MIN_UTC);
        let hi = to.unwrap_or(chrono::DateTime::<chrono::Utc>::MAX_UTC);
        dataset = dataset.filter_issue_times(lo, hi);
    }
    if dataset.is_empty() {
        bail!(forecast_dynamics::Error::InvalidInput("the test set is empty".into()));
    }
    let config = ScoreConfig { pit_bins: a.pit_bins, ci_level: a.ci_level, tol: a.tol, log_scale: a.log_scale, seed: a.seed };
    let report = match &a.coeffs {
        Some(p) => {
            manifest.input(p)?;
            let cal = CalibrationResult::from_toml(&read_text(p)?)?;
            scoring::score_dataset(&dataset, &cal, &config)?
        }
        None => {
            let config = ScoreConfig { log_scale: Some(a.log_scale.unwrap_or(variable != Variable::Temperature)), ..config };
            scoring::score_raw(&dataset, &config)?
        }
    };
    ensure_dir(&a.out_dir)?;
    let scores = a.out_dir.join("scores.csv");
    report.write_scores_csv(create(&scores)?)?;
    manifest.output(&scores);
    let hist = a.out_dir.join("histograms.csv");
    report.write_histograms_csv(create(&hist)?)?;
    manifest.output(&hist);
    for h in &report.horizons {
        match h.crps_model {
            Some(m) => info!("{}h: CRPS raw {:.4} model {:.4}", h.horizon_h, h.crps_raw, m),
            None => info!("{}h: CRPS raw {:.4}", h.horizon_h, h.crps_raw),
        }
    }
    manifest.write(&a.out_dir.join("manifest.toml"))
}

/// Forecast model for `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationModel {
    pub family: ModelFamily,
    pub b: f64,
    pub rho: RhoSchedule,
    pub delivery: f64,
    pub m0: f64,
    pub v0: f64,
}

const BAND_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

fn empirical_quantiles(mut x: Vec<f64>) -> Vec<f64> {
    x.sort_by(f64::total_cmp);
    let n = x.len();
    BAND_LEVELS
        .iter()
        .map(|&p| {
            let pos = p * (n - 1) as f64;
            let (i, frac) = (pos.floor() as usize, pos.fract());
            if i + 1 < n {
                x[i] + frac * (x[i + 1] - x[i])
            } else {
                x[i]
            }
        })
        .collect()
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("simulate");
    manifest.config(&a.model)?;
    manifest.seed(a.seed);
    let model: SimulationModel =
        toml::from_str(&read_text(&a.model)?).with_context(|| format!("bad model file {}", a.model.display()))?;
    let params = ModelParams::new(model.family, model.b, model.rho.clone(), model.delivery)?;
    let initial = ForecastState::new(0.0, model.m0, model.v0);
    let paths = models::simulate_paths(&params, initial, &a.grid, a.n, a.substeps, a.seed)?;
    ensure_dir(&a.out_dir)?;
    let out = a.out_dir.join("paths.csv");
    paths.write_csv(create(&out)?)?;
    manifest.output(&out);

    let bands = a.out_dir.join("bands.csv");
    let mut w = create(&bands)?;
    writeln!(w, "time,kind,q05,q25,q50,q75,q95")?;
    for (j, &t) in a.grid.iter().enumerate() {
        let rows = [
            ("m", empirical_quantiles(paths.m_at(j))),
            ("v", empirical_quantiles(paths.v_at(j))),
            (
                "predictive_path0",
                BAND_LEVELS
                    .iter()
                    .map(|&p| scoring::predictive_quantile(&params, &paths.state(0, j), p, 1e-9))
                    .collect::<forecast_dynamics::Result<Vec<f64>>>()?,
            ),
        ];
        for (kind, q) in rows {
            let q: Vec<String> = q.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{t},{kind},{}", q.join(","))?;
        }
    }
    w.flush()?;
    manifest.output(&bands);

    let last = paths.m_at(a.grid.len() - 1);
    let t_last = a.grid[a.grid.len() - 1];
    if last.len() > 1 {
        let n = last.len() as f64;
        let mean = last.iter().sum::<f64>() / n;
        let se = (last.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        println!(
            "martingale check at t = {t_last}: mean(m) = {mean:.6}, m0 = {}, {:.2} standard errors",
            model.m0,
            (mean - model.m0) / se
        );
    } else {
        println!("martingale check at t = {t_last}: skipped, needs at least 2 paths");
    }
    manifest.write(&a.out_dir.join("manifest.toml"))
}

pub fn trade(a: TradeArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("trade");
    let mut config = match &a.config {
        Some(p) => {
            manifest.config(p)?;
            ExperimentConfig::from_toml(&read_text(p)?)?
        }
        None => ExperimentConfig::reference(),
    };
    if let Some(n) = a.n_train {
        config.trading.n_train = n;
    }
    if let Some(n) = a.n_test {
        config.trading.n_test = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    manifest.seed(config.seed);
    ensure_dir(&a.out_dir)?;
    let used = a.out_dir.join("experiment.toml");
    fs::write(&used, config.to_toml()?)?;
    manifest.output(&used);
    let policy_dir = a.out_dir.join("policies");
    if !a.no_policies {
        ensure_dir(&policy_dir)?;
    }
    let mut written = Vec::new();
    let result = trading::compare_models(&config, |name, outcome| {
        let p = &outcome.point;
        info!(
            "{name}: mu_S = {}, V0 = {}: A {:.3} ± {:.3}, B {:.3} ± {:.3}, relative {:+.2}%{}",
            p.mu_s,
            p.v0,
            p.a.mean,
            p.a.stderr,
            p.b.mean,
            p.b.stderr,
            p.relative_pct,
            if p.significant { " (significant)" } else { "" }
        );
        if !a.no_policies {
            for (tag, policy) in [("A", &outcome.policy_a), ("B", &outcome.policy_b)] {
                let path = policy_dir.join(format!("{name}_{tag}.policy"));
                let mut w = BufWriter::new(File::create(&path)?);
                policy.write_text(&mut w)?;
                w.flush()?;
                written.push(path);
            }
        }
        Ok(())
    })?;
    for p in written {
        manifest.output(&p);
    }
    let table = a.out_dir.join("relative_profits.csv");
    trading::write_results_csv(&result.by_drift, create(&table)?)?;
    manifest.output(&table);
    let sweep = a.out_dir.join("uncertainty_sweep.csv");
    trading::write_results_csv(&result.by_uncertainty, create(&sweep)?)?;
    manifest.output(&sweep);
    manifest.write(&a.out_dir.join("manifest.toml"))
}

fn scaled(mut c: SyntheticConfig, scale: RecoverScale) -> SyntheticConfig {
    match scale {
        RecoverScale::Full => {}
        RecoverScale::Small => c.n_locations = 60,
        RecoverScale::Tiny => {
            c.n_dates = 10;
            c.n_locations = 12;
            c.members = 20;
            c.substeps_per_hour = 2;
        }
    }
    c
}

pub fn recover(a: RecoverArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("recover");
    let truth = match (&a.params, a.family.as_deref()) {
        (Some(p), _) => {
            manifest.config(p)?;
            toml::from_str::<SyntheticConfig>(&read_text(p)?).with_context(|| format!("bad generating values {}", p.display()))?
        }
        (None, Some("wind" | "wind_speed" | "log_nig")) => SyntheticConfig::wind_reference(),
        (None, Some("temperature" | "t2m" | "nig")) => SyntheticConfig::temperature_reference(),
        (None, Some(other)) => bail!(forecast_dynamics::Error::InvalidInput(format!("unknown recovery family '{other}'"))),
        (None, None) => bail!(forecast_dynamics::Error::InvalidInput("give --family or --params".into())),
    };
    let mut truth = scaled(truth, a.scale);
    if let Some(s) = a.seed {
        truth.seed = s;
    }
    manifest.seed(truth.seed);
    if a.scale == RecoverScale::Tiny {
        warn!("scale 'tiny' gives wide sampling intervals; the error table is a smoke test, not a recovery check");
    }
    let data = calibration::generate_synthetic(&truth)?;
    info!(
        "generated {} records ({} collapsed, {} dropped)",
        data.dataset.len(),
        data.collapsed,
        data.dropped
    );
    ensure_dir(&a.out_dir)?;
    let ens = a.out_dir.join("ensembles.csv");
    let real = a.out_dir.join("realizations.csv");
    data.dataset.save(&ens, &real)?;
    manifest.output(&ens);
    manifest.output(&real);
    let mut config = CalibrationConfig::new(truth.family);
    config.horizons = truth.coefficients.iter().map(|k| k.horizon_h).collect();
    config.mean_scale = truth.mean_scale;
    config.seed = truth.seed;
    if let Some(r) = a.rho_averaging {
        config.rho_averaging = r.into();
    }
    // calibrate from the files, exactly as `calibrate` would
    let dataset = load_dataset(&ens, &real, truth.variable())?;
    let result = calibration::calibrate(&dataset, &config)?;
    let coeffs = a.out_dir.join("coeffs.toml");
    save_calibration(&result, &coeffs, &mut manifest)?;
    let rows = recovery_report(&truth, &result);
    let table = a.out_dir.join("recovery.csv");
    let mut w = create(&table)?;
    writeln!(w, "parameter,truth,estimate,abs_error,rel_error,tolerance,pass")?;
    for r in &rows {
        let tol = match r.tolerance {
            calibration::Tolerance::Absolute(t) => format!("abs {t}"),
            calibration::Tolerance::Relative(t) => format!("rel {t}"),
        };
        writeln!(w, "{},{},{},{},{},{tol},{}", r.parameter, r.truth, r.estimate, r.abs_error(), r.rel_error(), r.pass())?;
    }
    w.flush()?;
    manifest.output(&table);
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass()).map(|r| r.parameter.as_str()).collect();
    if failed.is_empty() {
        info!("all {} parameters within tolerance", rows.len());
    } else {
        warn!("{} of {} parameters outside tolerance: {}", failed.len(), rows.len(), failed.join(", "));
    }
    manifest.write(&a.out_dir.join("manifest.toml"))
}
