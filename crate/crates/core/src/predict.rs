//! Simple kriging, leave-one-out validation and empirical semi-variograms.

use serde::{Deserialize, Serialize};

use crate::dense::{self, CholFactor};
use crate::error::{Error, Result};
use crate::geom::{Point, SiteSet};
use crate::likelihood::covariance_matrix;
use crate::models::{CorrelationFamily, ParamVector};

/// Zero-mean kriging predictor with the data covariance factorized once.
#[derive(Clone, Debug)]
pub struct SimpleKriging {
    family: CorrelationFamily,
    theta: ParamVector,
    coords: Vec<Point>,
    factor: CholFactor,
    /// `K⁻¹ Z`
    weights: Vec<f64>,
}

impl SimpleKriging {
    pub fn new(sites: &SiteSet, family: CorrelationFamily, theta: &ParamVector) -> Result<Self> {
        theta.validate()?;
        let z = sites.data()?;
        sites.check_distinct()?;
        let factor = dense::cholesky_in_place(covariance_matrix(sites.coords(), family, theta))?;
        let weights = dense::solve_spd(&factor, z)?;
        Ok(SimpleKriging {
            family,
            theta: *theta,
            coords: sites.coords().to_vec(),
            factor,
            weights,
        })
    }

    /// Cross-covariance between `target` and every data site; includes the
    /// nugget only where the target coincides with a site.
    fn cross_covariance(&self, target: Point) -> Vec<f64> {
        self.coords
            .iter()
            .map(|p| {
                let h = p.distance(target);
                let nugget = if h == 0.0 { self.theta.tau2 } else { 0.0 };
                self.theta.sigma2 * self.family.rho(h, self.theta.range) + nugget
            })
            .collect()
    }

    pub fn predict(&self, target: Point) -> Result<f64> {
        if !target.is_finite() {
            return Err(Error::Domain("kriging target must be finite".into()));
        }
        let c = self.cross_covariance(target);
        Ok(c.iter().zip(&self.weights).map(|(a, b)| a * b).sum())
    }

    /// Leave-one-out residual `Z_k − ẑ_{−k}` from the factor of the full system:
    /// `[K⁻¹Z]_k / [K⁻¹]_kk`.
    pub fn loo_residual(&self, k: usize) -> Result<f64> {
        let n = self.coords.len();
        if k >= n {
            return Err(Error::Domain(format!("site {k} out of range")));
        }
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let inv_kk = self.factor.inv_quad(&e)?;
        Ok(self.weights[k] / inv_kk)
    }
}

/// Simple kriging prediction `cᵀ K⁻¹ Z` at `target`.
pub fn simple_kriging(
    sites: &SiteSet,
    family: CorrelationFamily,
    theta: &ParamVector,
    target: Point,
) -> Result<f64> {
    if sites.is_empty() {
        theta.validate()?;
        return Ok(0.0);
    }
    SimpleKriging::new(sites, family, theta)?.predict(target)
}

/// Leave-one-out RMSE over all sites.
pub fn loo_rmse(sites: &SiteSet, family: CorrelationFamily, theta: &ParamVector) -> Result<f64> {
    let all: Vec<usize> = (0..sites.len()).collect();
    loo_rmse_subset(sites, family, theta, &all)
}

/// Leave-one-out RMSE over the listed sites, each predicted from all the others.
pub fn loo_rmse_subset(
    sites: &SiteSet,
    family: CorrelationFamily,
    theta: &ParamVector,
    held_out: &[usize],
) -> Result<f64> {
    theta.validate()?;
    let z = sites.data()?;
    if held_out.is_empty() {
        return Err(Error::Domain("no sites to hold out".into()));
    }
    if sites.len() == 1 {
        // nothing left to predict from: the zero-mean prior predicts 0
        return Ok(z[0].abs());
    }
    let krig = SimpleKriging::new(sites, family, theta)?;
    let mut sse = 0.0;
    for &k in held_out {
        let r = krig.loo_residual(k)?;
        sse += r * r;
    }
    Ok((sse / held_out.len() as f64).sqrt())
}

/// Binned classical semi-variogram estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramEstimate {
    pub bin_centers: Vec<f64>,
    /// `None` for bins without pairs.
    pub semivariance: Vec<Option<f64>>,
    pub counts: Vec<u64>,
}

/// Default binning: 15 bins up to half the largest pairwise distance.
pub fn default_variogram_bins(sites: &SiteSet) -> (usize, f64) {
    (15, 0.5 * sites.max_pairwise_distance())
}

/// `γ̂(b) = (2N_b)⁻¹ Σ (Z_i − Z_j)²` over pairs with distance in bin `b`,
/// using equal-width bins on `(0, max_lag]`.
pub fn empirical_semivariogram(sites: &SiteSet, n_bins: usize, max_lag: f64) -> Result<VariogramEstimate> {
    let z = sites.data()?;
    if sites.len() < 2 {
        return Err(Error::Domain("variogram needs at least two sites".into()));
    }
    if n_bins == 0 {
        return Err(Error::Domain("bin count must be >= 1".into()));
    }
    if !(max_lag.is_finite() && max_lag > 0.0) {
        return Err(Error::Domain(format!("max lag must be > 0, got {max_lag}")));
    }
    let width = max_lag / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0u64; n_bins];
    let coords = sites.coords();
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let h = coords[i].distance(coords[j]);
            if h == 0.0 || h > max_lag {
                continue;
            }
            let bin = ((h / width).ceil() as usize).clamp(1, n_bins) - 1;
            let d = z[i] - z[j];
            sums[bin] += d * d;
            counts[bin] += 1;
        }
    }
    Ok(VariogramEstimate {
        bin_centers: (0..n_bins).map(|b| (b as f64 + 0.5) * width).collect(),
        semivariance: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / (2.0 * c as f64)))
            .collect(),
        counts,
    })
}

/// Model semi-variogram `τ² + σ²(1 − ρ(h; φ))` for `h > 0`, zero at the origin.
pub fn model_semivariogram(family: CorrelationFamily, theta: &ParamVector, h: f64) -> f64 {
    if h == 0.0 {
        0.0
    } else {
        theta.tau2 + theta.sigma2 * (1.0 - family.rho(h, theta.range))
    }
}
