//! Forecast dynamics: two-factor diffusions of the conditional mean `m` and
//! the uncertainty factor `V`, and the predictive laws they induce for the
//! quantity being forecast.

mod dynamics;
pub(crate) mod laws;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dynamics::{simulate_paths, step, time_change, PathSet};
pub use laws::{
    canonical_nig_params, char_fn, draw_terminal, log_density, nig_log_pdf, predictive_cdf,
    predictive_density, predictive_moments, sample_terminal, v_from_sigma2, Moments,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelFamily {
    /// Brownian mean, geometric-Brownian uncertainty; Student-t predictive law.
    #[serde(alias = "student_t")]
    StudentT,
    /// Brownian mean, square-root uncertainty; symmetric NIG predictive law.
    #[serde(alias = "nig")]
    Nig,
    /// Geometric mean, geometric uncertainty; log-GH predictive law.
    #[serde(alias = "log_gh")]
    LogGh,
    /// Geometric mean, square-root uncertainty; log-NIG predictive law.
    #[serde(alias = "log_nig")]
    LogNig,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::StudentT,
        ModelFamily::Nig,
        ModelFamily::LogGh,
        ModelFamily::LogNig,
    ];

    /// Families for strictly positive quantities.
    pub fn is_positive(self) -> bool {
        matches!(self, ModelFamily::LogGh | ModelFamily::LogNig)
    }

    /// Families whose uncertainty factor follows a square-root diffusion and
    /// may be absorbed at zero.
    pub fn has_sqrt_variance(self) -> bool {
        matches!(self, ModelFamily::Nig | ModelFamily::LogNig)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::StudentT => "student_t",
            ModelFamily::Nig => "nig",
            ModelFamily::LogGh => "log_gh",
            ModelFamily::LogNig => "log_nig",
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "student_t" | "studentt" | "student" => Ok(ModelFamily::StudentT),
            "nig" => Ok(ModelFamily::Nig),
            "log_gh" | "loggh" => Ok(ModelFamily::LogGh),
            "log_nig" | "lognig" => Ok(ModelFamily::LogNig),
            other => Err(Error::invalid(format!("unknown model family '{other}'"))),
        }
    }
}

/// Piecewise-constant `ρ` as a function of lead time (hours before delivery).
///
/// `breakpoints` has one more entry than `values`; `values[i]` applies on
/// the lead-time interval `(breakpoints[i], breakpoints[i+1]]`. Outside the
/// covered range the first/last value is extended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl RhoSchedule {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = RhoSchedule { breakpoints, values };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(rho: f64) -> Self {
        RhoSchedule { breakpoints: vec![0.0, 1.0], values: vec![rho] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("rho schedule has no values"));
        }
        if self.breakpoints.len() != self.values.len() + 1 {
            return Err(Error::invalid(format!(
                "rho schedule needs {} breakpoints for {} values, got {}",
                self.values.len() + 1,
                self.values.len(),
                self.breakpoints.len()
            )));
        }
        if self.breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("rho breakpoints must be strictly increasing"));
        }
        if self.values.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid("rho values must be finite and > 0"));
        }
        Ok(())
    }

    /// `ρ` at lead time `lead`.
    pub fn at(&self, lead: f64) -> f64 {
        let n = self.values.len();
        for i in 0..n {
            if lead <= self.breakpoints[i + 1] {
                return self.values[i];
            }
        }
        self.values[n - 1]
    }

    /// `∫_0^lead ρ²(ℓ) dℓ`.
    pub(crate) fn cumulative(&self, lead: f64) -> f64 {
        let bp = &self.breakpoints;
        let n = self.values.len();
        let sq = |i: usize| self.values[i] * self.values[i];
        // below the first breakpoint the first value is extended down to 0
        let mut acc = sq(0) * lead.min(bp[0]).max(0.0);
        for i in 0..n {
            let lo = bp[i];
            let hi = if i + 1 == n { f64::INFINITY } else { bp[i + 1] };
            if lead <= lo {
                break;
            }
            acc += sq(i) * (lead.min(hi) - lo);
        }
        acc
    }
}

/// Everything that determines the forecast dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub family: ModelFamily,
    pub b: f64,
    pub rho: RhoSchedule,
    /// Delivery time `T` (hours).
    pub delivery: f64,
}

impl ModelParams {
    pub fn new(family: ModelFamily, b: f64, rho: RhoSchedule, delivery: f64) -> Result<Self> {
        let p = ModelParams { family, b, rho, delivery };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(Error::invalid(format!("shape b must be > 0, got {}", self.b)));
        }
        if !(self.delivery > 0.0) || !self.delivery.is_finite() {
            return Err(Error::invalid("delivery time must be finite and > 0"));
        }
        self.rho.validate()
    }
}

/// Conditional mean and uncertainty factor of the predictive law at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastState {
    pub t: f64,
    pub m: f64,
    pub v: f64,
}

impl ForecastState {
    pub fn new(t: f64, m: f64, v: f64) -> Self {
        ForecastState { t, m, v }
    }

    pub(crate) fn check(&self, family: ModelFamily) -> Result<()> {
        if !self.m.is_finite() || !self.v.is_finite() {
            return Err(Error::invalid("forecast state must be finite"));
        }
        if self.v < 0.0 {
            return Err(Error::domain(format!("uncertainty factor V must be >= 0, got {}", self.v)));
        }
        if family.is_positive() && !(self.m > 0.0) {
            return Err(Error::domain(format!(
                "{family} requires m > 0, got {}",
                self.m
            )));
        }
        Ok(())
    }
}

/// Canonical parameters of a normal inverse Gaussian law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigCanonical {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub mu: f64,
}

impl NigCanonical {
    /// Builds the parameter set, deriving `γ = √(α² − β²)`.
    pub fn new(alpha: f64, beta: f64, delta: f64, mu: f64) -> Result<Self> {
        if !(alpha > beta.abs()) || !alpha.is_finite() {
            return Err(Error::domain(format!("NIG needs alpha > |beta|, got alpha={alpha}, beta={beta}")));
        }
        if !(delta >= 0.0) || !delta.is_finite() || !mu.is_finite() {
            return Err(Error::domain("NIG needs finite delta >= 0 and finite mu"));
        }
        let gamma = ((alpha - beta) * (alpha + beta)).sqrt();
        Ok(NigCanonical { alpha, beta, gamma, delta, mu })
    }

    pub fn mean(&self) -> f64 {
        self.mu + self.delta * self.beta / self.gamma
    }

    pub fn variance(&self) -> f64 {
        self.delta * self.alpha * self.alpha / self.gamma.powi(3)
    }
}
