//! Isotropic correlation and covariance functions parameterized by the
//! practical range: every family drops below 0.05 correlation beyond `range`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EXPONENTIAL_SCALE: f64 = 3.0;
const MATERN15_SCALE: f64 = 4.7619;
const CAUCHY_SCALE: f64 = 4.3588;

/// Correlation families with smoothness fixed per family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationFamily {
    /// Matérn with smoothness 0.5: `exp(-3h/φ)`.
    Exponential,
    /// Matérn with smoothness 1.5: `exp(-4.7619h/φ)(1 + 4.7619h/φ)`.
    Matern15,
    /// Cauchy: `(1 + (4.3588h/φ)²)⁻¹`.
    Cauchy,
}

impl CorrelationFamily {
    pub const ALL: [CorrelationFamily; 3] = [
        CorrelationFamily::Exponential,
        CorrelationFamily::Matern15,
        CorrelationFamily::Cauchy,
    ];

    /// Unchecked correlation for hot loops. Callers guarantee `h >= 0` and `range > 0`.
    #[inline]
    pub fn rho(self, h: f64, range: f64) -> f64 {
        match self {
            CorrelationFamily::Exponential => (-EXPONENTIAL_SCALE * h / range).exp(),
            CorrelationFamily::Matern15 => {
                let u = MATERN15_SCALE * h / range;
                (-u).exp() * (1.0 + u)
            }
            CorrelationFamily::Cauchy => {
                let u = CAUCHY_SCALE * h / range;
                1.0 / (1.0 + u * u)
            }
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            CorrelationFamily::Exponential => "exponential",
            CorrelationFamily::Matern15 => "matern15",
            CorrelationFamily::Cauchy => "cauchy",
        }
    }
}

impl fmt::Display for CorrelationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for CorrelationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" => Ok(CorrelationFamily::Exponential),
            "matern15" => Ok(CorrelationFamily::Matern15),
            "cauchy" => Ok(CorrelationFamily::Cauchy),
            other => Err(Error::Config(format!(
                "unknown correlation family `{other}` (expected exponential, matern15 or cauchy)"
            ))),
        }
    }
}

/// Covariance parameters `(τ², σ², φ)`: nugget, partial sill and practical range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub tau2: f64,
    pub sigma2: f64,
    pub range: f64,
}

impl ParamVector {
    pub fn new(tau2: f64, sigma2: f64, range: f64) -> Result<Self> {
        let theta = ParamVector { tau2, sigma2, range };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau2.is_finite() && self.tau2 >= 0.0) {
            return Err(Error::Domain(format!("tau2 must be >= 0, got {}", self.tau2)));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Domain(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(Error::Domain(format!("range must be > 0, got {}", self.range)));
        }
        Ok(())
    }

    /// Components in the order `[τ², σ², φ]`.
    pub fn to_array(self) -> [f64; 3] {
        [self.tau2, self.sigma2, self.range]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        ParamVector {
            tau2: v[0],
            sigma2: v[1],
            range: v[2],
        }
    }

    /// Marginal variance `σ² + τ²`.
    pub fn sill(&self) -> f64 {
        self.sigma2 + self.tau2
    }
}

impl FromStr for ParamVector {
    type Err = Error;

    /// Parses `tau2,sigma2,range`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad parameter list `{s}`: {e}")))?;
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "expected three comma-separated values tau2,sigma2,range, got `{s}`"
            )));
        }
        ParamVector::new(parts[0], parts[1], parts[2]).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Correlation `ρ(h; φ)` with argument checks.
pub fn correlate(family: CorrelationFamily, h: f64, range: f64) -> Result<f64> {
    if !(h.is_finite() && h >= 0.0) && h != f64::INFINITY {
        return Err(Error::Domain(format!("distance must be >= 0, got {h}")));
    }
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::Domain(format!("range must be > 0, got {range}")));
    }
    Ok(family.rho(h, range))
}

/// Covariance `σ²ρ(h; φ) + τ²·1{h = 0}`.
pub fn covariance(family: CorrelationFamily, h: f64, theta: &ParamVector) -> Result<f64> {
    theta.validate()?;
    let rho = correlate(family, h, theta.range)?;
    let nugget = if h == 0.0 { theta.tau2 } else { 0.0 };
    Ok(theta.sigma2 * rho + nugget)
}
