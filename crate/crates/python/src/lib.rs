use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::forecast_dynamics::calibration::{self, CalibrationConfig, CalibrationResult, MeanScale, RhoAveraging, SyntheticConfig};
use ::forecast_dynamics::dataio::{Dataset, Variable};
use ::forecast_dynamics::models::{self, ForecastState, ModelFamily, ModelParams, NigCanonical, RhoSchedule};
use ::forecast_dynamics::scoring::{self, ScoreConfig};
use ::forecast_dynamics::trading::{self, ExperimentConfig, SweepPoint};
use ::forecast_dynamics::Error;

fn err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse_family(name: &str) -> PyResult<ModelFamily> {
    name.parse().map_err(err)
}

/// Forecast dynamics of one family: shape `b`, piecewise-constant `rho`
/// over lead time, delivery time in hours.
#[pyclass(name = "ModelParams", module = "forecast_dynamics", frozen)]
struct PyModelParams {
    inner: ModelParams,
}

#[pymethods]
impl PyModelParams {
    /// `rho` is a single value, or one value per interval of `breakpoints`
    /// (lead times in hours, one more entry than `rho`).
    #[new]
    #[pyo3(signature = (family, b, rho, delivery, breakpoints = None))]
    fn new(family: &str, b: f64, rho: Vec<f64>, delivery: f64, breakpoints: Option<Vec<f64>>) -> PyResult<Self> {
        let schedule = match breakpoints {
            Some(bp) => RhoSchedule::new(bp, rho).map_err(err)?,
            None if rho.len() == 1 => RhoSchedule::constant(rho[0]),
            None => return Err(PyValueError::new_err("several rho values need breakpoints")),
        };
        let inner = ModelParams::new(parse_family(family)?, b, schedule, delivery).map_err(err)?;
        Ok(PyModelParams { inner })
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.name()
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }

    #[getter]
    fn delivery(&self) -> f64 {
        self.inner.delivery
    }

    #[getter]
    fn rho(&self) -> Vec<f64> {
        self.inner.rho.values.clone()
    }

    #[getter]
    fn breakpoints(&self) -> Vec<f64> {
        self.inner.rho.breakpoints.clone()
    }

    /// The clock `θ_t = ∫_0^t ρ²(T−s) ds`.
    fn time_change(&self, t: f64) -> PyResult<f64> {
        models::time_change(&self.inner.rho, self.inner.delivery, t).map_err(err)
    }

    /// Density of the delivered quantity given the state `(t, m, v)`.
    fn density(&self, x: f64, t: f64, m: f64, v: f64) -> PyResult<f64> {
        models::predictive_density(&self.inner, &ForecastState::new(t, m, v), x).map_err(err)
    }

    fn log_density(&self, x: f64, t: f64, m: f64, v: f64) -> PyResult<f64> {
        models::log_density(&self.inner, &ForecastState::new(t, m, v), x).map_err(err)
    }

    #[pyo3(signature = (x, t, m, v, tol = 1e-10))]
    fn cdf(&self, x: f64, t: f64, m: f64, v: f64, tol: f64) -> PyResult<f64> {
        models::predictive_cdf(&self.inner, &ForecastState::new(t, m, v), x, tol).map_err(err)
    }

    #[pyo3(signature = (p, t, m, v, tol = 1e-10))]
    fn quantile(&self, p: f64, t: f64, m: f64, v: f64, tol: f64) -> PyResult<f64> {
        scoring::predictive_quantile(&self.inner, &ForecastState::new(t, m, v), p, tol).map_err(err)
    }

    /// `(mean, variance)`; the variance is `inf` where it does not exist.
    fn moments(&self, t: f64, m: f64, v: f64) -> PyResult<(f64, f64)> {
        let mo = models::predictive_moments(&self.inner, &ForecastState::new(t, m, v)).map_err(err)?;
        Ok((mo.mean, mo.variance))
    }

    /// CRPS of the predictive law at the realization `y`.
    #[pyo3(signature = (y, t, m, v, tol = 1e-6))]
    fn crps(&self, y: f64, t: f64, m: f64, v: f64, tol: f64) -> PyResult<f64> {
        scoring::predictive_crps(&self.inner, &ForecastState::new(t, m, v), y, tol).map_err(err)
    }

    /// Exact draws of the delivered quantity.
    #[pyo3(signature = (t, m, v, n, seed = 0))]
    fn sample_terminal(&self, py: Python<'_>, t: f64, m: f64, v: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        let state = ForecastState::new(t, m, v);
        py.detach(|| models::sample_terminal(&self.inner, &state, n, seed)).map_err(err)
    }

    /// Paths of `(m, V)` on `grid`, starting from `(m0, v0)` at `grid[0]`.
    /// Returns two lists of rows, one row per path.
    #[pyo3(signature = (grid, m0, v0, n_paths, substeps = 50, seed = 0))]
    fn simulate(
        &self,
        py: Python<'_>,
        grid: Vec<f64>,
        m0: f64,
        v0: f64,
        n_paths: usize,
        substeps: usize,
        seed: u64,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let t0 = *grid.first().ok_or_else(|| PyValueError::new_err("empty grid"))?;
        let initial = ForecastState::new(t0, m0, v0);
        let paths = py
            .detach(|| models::simulate_paths(&self.inner, initial, &grid, n_paths, substeps, seed))
            .map_err(err)?;
        let k = paths.n_times();
        let rows = |flat: &[f64]| flat.chunks(k).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Ok((rows(&paths.m), rows(&paths.v)))
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelParams(family='{}', b={}, rho={:?}, delivery={})",
            self.inner.family, self.inner.b, self.inner.rho.values, self.inner.delivery
        )
    }
}

/// Canonical `(alpha, beta, gamma, delta, mu)` of the (log-)predictive NIG law.
#[pyfunction]
fn canonical_nig_params<'py>(py: Python<'py>, family: &str, m: f64, v: f64, b: f64) -> PyResult<Bound<'py, PyDict>> {
    let c = models::canonical_nig_params(parse_family(family)?, m, v, b).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("alpha", c.alpha)?;
    d.set_item("beta", c.beta)?;
    d.set_item("gamma", c.gamma)?;
    d.set_item("delta", c.delta)?;
    d.set_item("mu", c.mu)?;
    Ok(d)
}

#[pyfunction]
fn crps_ensemble(members: Vec<f64>, y: f64) -> f64 {
    scoring::crps_ensemble(&members, y)
}

/// CRPS of a NIG law given in canonical parameters.
#[pyfunction]
#[pyo3(signature = (alpha, beta, delta, mu, y, tol = 1e-6))]
fn crps_nig(alpha: f64, beta: f64, delta: f64, mu: f64, y: f64, tol: f64) -> PyResult<f64> {
    let c = NigCanonical::new(alpha, beta, delta, mu).map_err(err)?;
    scoring::crps_parametric(&c, y, tol).map_err(err)
}

/// Fitted EMOS coefficients, shared shape and `rho` schedule.
#[pyclass(name = "Calibration", module = "forecast_dynamics", frozen)]
struct PyCalibration {
    inner: CalibrationResult,
}

#[pymethods]
impl PyCalibration {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyCalibration { inner: CalibrationResult::from_toml(text).map_err(err)? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.name()
    }

    #[getter]
    fn shared_b(&self) -> f64 {
        self.inner.shared_b
    }

    #[getter]
    fn rho(&self) -> Vec<f64> {
        self.inner.rho.values.clone()
    }

    #[getter]
    fn breakpoints(&self) -> Vec<f64> {
        self.inner.rho.breakpoints.clone()
    }

    #[getter]
    fn horizons(&self) -> Vec<u32> {
        self.inner.per_horizon.iter().map(|k| k.horizon_h).collect()
    }

    /// `{a0, a1, c, d, b}` for one horizon, with the shared shape.
    fn coefficients<'py>(&self, py: Python<'py>, horizon: u32) -> PyResult<Bound<'py, PyDict>> {
        let k = self
            .inner
            .coefficients(horizon)
            .ok_or_else(|| PyValueError::new_err(format!("no coefficients for horizon {horizon}h")))?;
        let d = PyDict::new(py);
        d.set_item("a0", k.a0)?;
        d.set_item("a1", k.a1)?;
        d.set_item("c", k.c)?;
        d.set_item("d", k.d)?;
        d.set_item("b", k.b)?;
        Ok(d)
    }

    /// Predictive `(m, sigma2)` of one ensemble.
    fn predictive(&self, horizon: u32, members: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.predictive(horizon, &members).map_err(err)
    }

    /// Predictive `(m, V)` of one ensemble.
    fn state(&self, horizon: u32, members: Vec<f64>) -> PyResult<(f64, f64)> {
        let s = self.inner.state(horizon, &members).map_err(err)?;
        Ok((s.m, s.v))
    }

    /// The fitted dynamics for a given delivery time.
    fn model_params(&self, delivery: f64) -> PyResult<PyModelParams> {
        let inner = ModelParams::new(self.inner.family, self.inner.shared_b, self.inner.rho.clone(), delivery).map_err(err)?;
        Ok(PyModelParams { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Calibration(family='{}', shared_b={}, rho={:?}, horizons={:?})",
            self.inner.family,
            self.inner.shared_b,
            self.inner.rho.values,
            self.horizons()
        )
    }
}

fn load(ensembles: PathBuf, realizations: PathBuf, variable: &str) -> PyResult<(Dataset, Variable)> {
    let variable: Variable = variable.parse().map_err(err)?;
    let (dataset, _) = Dataset::load(&ensembles, &realizations, variable).map_err(err)?;
    Ok((dataset, variable))
}

/// Three-step calibration on the CSV files written by the data layer.
#[pyfunction]
#[pyo3(signature = (ensembles, realizations, variable, family = None, horizons = None, mean_scale = "linear", rho_averaging = "per_record", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn calibrate(
    py: Python<'_>,
    ensembles: PathBuf,
    realizations: PathBuf,
    variable: &str,
    family: Option<&str>,
    horizons: Option<Vec<u32>>,
    mean_scale: &str,
    rho_averaging: &str,
    seed: u64,
) -> PyResult<PyCalibration> {
    let (dataset, variable) = load(ensembles, realizations, variable)?;
    let family = match family {
        Some(f) => parse_family(f)?,
        None if variable == Variable::Temperature => ModelFamily::Nig,
        None => ModelFamily::LogNig,
    };
    let mut config = CalibrationConfig::new(family);
    if let Some(h) = horizons {
        config.horizons = h;
    }
    config.mean_scale = mean_scale.parse::<MeanScale>().map_err(err)?;
    config.rho_averaging = match rho_averaging.to_ascii_lowercase().replace('-', "_").as_str() {
        "per_record" => RhoAveraging::PerRecord,
        "pooled" => RhoAveraging::Pooled,
        other => return Err(PyValueError::new_err(format!("unknown rho averaging '{other}'"))),
    };
    config.seed = seed;
    let inner = py.detach(|| calibration::calibrate(&dataset, &config)).map_err(err)?;
    Ok(PyCalibration { inner })
}

/// Verification scores per horizon. Without a calibration only the raw
/// ensemble is scored.
#[pyfunction]
#[pyo3(signature = (ensembles, realizations, variable, calibration = None, pit_bins = 20, ci_level = 0.9, tol = 1e-6, log_scale = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn score<'py>(
    py: Python<'py>,
    ensembles: PathBuf,
    realizations: PathBuf,
    variable: &str,
    calibration: Option<PyRef<'py, PyCalibration>>,
    pit_bins: usize,
    ci_level: f64,
    tol: f64,
    log_scale: Option<bool>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let (dataset, variable) = load(ensembles, realizations, variable)?;
    let config = ScoreConfig { pit_bins, ci_level, tol, log_scale, seed };
    let report = match &calibration {
        Some(c) => {
            let cal = &c.inner;
            py.detach(|| scoring::score_dataset(&dataset, cal, &config))
        }
        None => {
            let config = ScoreConfig { log_scale: Some(log_scale.unwrap_or(variable != Variable::Temperature)), ..config };
            py.detach(|| scoring::score_raw(&dataset, &config))
        }
    }
    .map_err(err)?;
    let out = PyDict::new(py);
    for h in &report.horizons {
        let d = PyDict::new(py);
        d.set_item("n_records", h.n_records)?;
        d.set_item("mse_raw", h.mse_raw)?;
        d.set_item("crps_raw", h.crps_raw)?;
        d.set_item("mse_model", h.mse_model)?;
        d.set_item("crps_model", h.crps_model)?;
        d.set_item("ci_width_mean", h.ci_width_mean)?;
        if let Some(t) = report.talagrand.get(&h.horizon_h) {
            d.set_item("talagrand", t.clone())?;
        }
        if let Some(p) = report.pit.get(&h.horizon_h) {
            d.set_item("pit", p.counts.clone())?;
            d.set_item("pit_ks_pvalue", p.ks_pvalue)?;
        }
        out.set_item(h.horizon_h, d)?;
    }
    Ok(out)
}

/// Synthetic ensembles and realizations from built-in generating values
/// ("wind" or "temperature"), written as CSV. Returns the record count.
#[pyfunction]
#[pyo3(signature = (ensembles, realizations, family = "wind", n_dates = None, n_locations = None, members = None, seed = None))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    py: Python<'_>,
    ensembles: PathBuf,
    realizations: PathBuf,
    family: &str,
    n_dates: Option<usize>,
    n_locations: Option<usize>,
    members: Option<usize>,
    seed: Option<u64>,
) -> PyResult<usize> {
    let mut truth = match family {
        "wind" | "wind_speed" => SyntheticConfig::wind_reference(),
        "temperature" => SyntheticConfig::temperature_reference(),
        other => return Err(PyValueError::new_err(format!("unknown generating set '{other}'"))),
    };
    truth.n_dates = n_dates.unwrap_or(truth.n_dates);
    truth.n_locations = n_locations.unwrap_or(truth.n_locations);
    truth.members = members.unwrap_or(truth.members);
    truth.seed = seed.unwrap_or(truth.seed);
    let data = py.detach(|| calibration::generate_synthetic(&truth)).map_err(err)?;
    data.dataset.save(&ensembles, &realizations).map_err(err)?;
    Ok(data.dataset.len())
}

/// The reference trading experiment as TOML, to edit and pass back.
#[pyfunction]
fn reference_experiment() -> PyResult<String> {
    ExperimentConfig::reference().to_toml().map_err(err)
}

fn point_dict<'py>(py: Python<'py>, p: &SweepPoint) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mu_s", p.mu_s)?;
    d.set_item("v0", p.v0)?;
    d.set_item("mean_a", p.a.mean)?;
    d.set_item("stderr_a", p.a.stderr)?;
    d.set_item("mean_b", p.b.mean)?;
    d.set_item("stderr_b", p.b.stderr)?;
    d.set_item("relative_pct", p.relative_pct)?;
    d.set_item("diff_stderr", p.diff_stderr)?;
    d.set_item("significant", p.significant)?;
    Ok(d)
}

/// Train both trading policies at every sweep point and compare them on
/// common model-A test paths.
#[pyfunction]
#[pyo3(signature = (config = None, n_train = None, n_test = None, seed = None))]
fn compare_models<'py>(
    py: Python<'py>,
    config: Option<&str>,
    n_train: Option<usize>,
    n_test: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut c = match config {
        Some(text) => ExperimentConfig::from_toml(text).map_err(err)?,
        None => ExperimentConfig::reference(),
    };
    if let Some(n) = n_train {
        c.trading.n_train = n;
    }
    if let Some(n) = n_test {
        c.trading.n_test = n;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    let result = py.detach(|| trading::compare_models(&c, |_, _| Ok(()))).map_err(err)?;
    let out = PyDict::new(py);
    let rows = |points: &[SweepPoint]| points.iter().map(|p| point_dict(py, p)).collect::<PyResult<Vec<_>>>();
    out.set_item("by_drift", rows(&result.by_drift)?)?;
    out.set_item("by_uncertainty", rows(&result.by_uncertainty)?)?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "forecast_dynamics")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyCalibration>()?;
    m.add_function(wrap_pyfunction!(canonical_nig_params, m)?)?;
    m.add_function(wrap_pyfunction!(crps_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(crps_nig, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(reference_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(compare_models, m)?)?;
    Ok(())
}
