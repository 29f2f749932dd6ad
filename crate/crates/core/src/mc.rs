//! Monte Carlo studies, efficiency metrics and the parametric bootstrap.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{self, CholFactor};
use crate::error::{Error, Result};
use crate::geom::{PerturbedGrid, SiteSet};
use crate::likelihood::{covariance_matrix, Method, ObjectiveSpec};
use crate::models::{CorrelationFamily, ParamVector};
use crate::optim::{nelder_mead_maximize, EstimateResult, OptimOptions};

const STREAM_SITES: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_PARTITION: u64 = 3;
const STREAM_BOOTSTRAP: u64 = 4;

/// Independent generator for `(seed, purpose, index)`.
pub fn substream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Starting point for the optimizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitPolicy {
    /// Start from the data-generating parameters.
    #[default]
    Truth,
    /// Start from [`default_initial`].
    Data,
    Fixed(ParamVector),
}

/// `(0.05, sample variance, 10% of the bounding-box diagonal)`.
pub fn default_initial(sites: &SiteSet) -> Result<ParamVector> {
    let z = sites.data()?;
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sigma2 = if var.is_finite() && var > 0.0 { var } else { 1.0 };
    let diag = sites.extent_diagonal();
    let range = if diag > 0.0 { 0.1 * diag } else { 1.0 };
    ParamVector::new(0.05, sigma2, range)
}

/// Prepares the objective for `spec` on `sites` and maximizes it.
pub fn fit<R: Rng + ?Sized>(
    sites: &SiteSet,
    spec: &ObjectiveSpec,
    opts: &OptimOptions,
    rng: &mut R,
) -> Result<EstimateResult> {
    let objective = spec.prepare(sites, rng)?;
    nelder_mead_maximize(|theta| objective.evaluate(theta), opts)
}

fn default_fixed_sites() -> bool {
    true
}

fn default_max_iterations() -> usize {
    10_000
}

fn default_tolerance() -> f64 {
    1e-16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub family: CorrelationFamily,
    pub theta_true: ParamVector,
    pub n: usize,
    #[serde(default)]
    pub sites: PerturbedGrid,
    /// Reuse one site draw for every replicate.
    #[serde(default = "default_fixed_sites")]
    pub fixed_sites: bool,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.theta_true.validate()?;
        if self.replicates < 2 {
            return Err(Error::Config("a study needs at least 2 replicates".into()));
        }
        if self.n < 2 {
            return Err(Error::Config("a study needs at least 2 sites".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("a study needs at least one method".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        OptimOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            initial: self.theta_true,
        }
        .validate()
    }
}

/// Per-method replicate estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimates {
    pub label: String,
    pub method: Method,
    pub estimates: Vec<ParamVector>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

/// Efficiency of one method relative to ML.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    /// `[τ², σ², φ]`; `∞` when the method's RMSE is zero and ML's is not.
    pub rrmse: [f64; 3],
    /// `None` when a moment matrix is singular or too few replicates survive.
    pub global: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub family: CorrelationFamily,
    pub theta_true: ParamVector,
    pub n: usize,
    pub seed: u64,
    pub replicates_requested: usize,
    /// Indices of the replicates kept for every method.
    pub replicates_used: Vec<usize>,
    pub dropped: usize,
    pub methods: Vec<MethodEstimates>,
    /// One entry per method; empty when no ML method was run.
    pub efficiency: Vec<Efficiency>,
}

fn draw_sites(cfg: &StudyConfig, replicate: u64) -> Result<SiteSet> {
    let mut rng = substream(cfg.seed, STREAM_SITES, replicate);
    cfg.sites.generate(cfg.n, &mut rng)
}

fn simulate_on(sites: &SiteSet, l: &CholFactor, seed: u64, replicate: u64) -> Result<SiteSet> {
    let mut rng = substream(seed, STREAM_DATA, replicate);
    sites.clone().attach(dense::sample_gaussian(l, &mut rng))
}

fn run_replicate(
    cfg: &StudyConfig,
    fixed: Option<&(SiteSet, CholFactor)>,
    r: usize,
) -> Result<Vec<EstimateResult>> {
    let owned;
    let (sites, l) = match fixed {
        Some((s, l)) => (s, l),
        None => {
            let s = draw_sites(cfg, r as u64)?;
            let l = dense::cholesky(&covariance_matrix(s.coords(), cfg.family, &cfg.theta_true))?;
            owned = (s, l);
            (&owned.0, &owned.1)
        }
    };
    let data = simulate_on(sites, l, cfg.seed, r as u64)?;
    let initial = match cfg.init {
        InitPolicy::Truth => cfg.theta_true,
        InitPolicy::Data => default_initial(&data)?,
        InitPolicy::Fixed(theta) => theta,
    };
    let opts = OptimOptions {
        max_iterations: cfg.max_iterations,
        tolerance: cfg.tolerance,
        initial,
    };
    cfg.methods
        .iter()
        .map(|method| {
            // same stream for every method so duplicated entries agree
            let mut rng = substream(cfg.seed, STREAM_PARTITION, r as u64);
            let spec = ObjectiveSpec {
                family: cfg.family,
                method: method.clone(),
            };
            fit(&data, &spec, &opts, &mut rng)
        })
        .collect()
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

/// Runs every replicate of `cfg` and summarizes efficiency against ML.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let fixed = if cfg.fixed_sites {
        let s = draw_sites(cfg, 0)?;
        let l = dense::cholesky(&covariance_matrix(s.coords(), cfg.family, &cfg.theta_true))?;
        Some((s, l))
    } else {
        None
    };
    let pool = thread_pool(cfg.threads)?;
    let outcomes: Vec<Result<Vec<EstimateResult>>> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, fixed.as_ref(), r))
            .collect()
    });

    let mut methods: Vec<MethodEstimates> = cfg
        .methods
        .iter()
        .map(|m| MethodEstimates {
            label: m.label(),
            method: m.clone(),
            estimates: Vec::new(),
            iterations: Vec::new(),
            converged: Vec::new(),
        })
        .collect();
    let mut used = Vec::new();
    let mut dropped = 0;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(fits) => {
                used.push(r);
                for (slot, fit) in methods.iter_mut().zip(fits) {
                    slot.estimates.push(fit.theta_hat);
                    slot.iterations.push(fit.iterations);
                    slot.converged.push(fit.converged);
                }
            }
            // configuration errors are not per-replicate failures
            Err(e @ (Error::Config(_) | Error::NoActivePairs)) => return Err(e),
            Err(_) => dropped += 1,
        }
    }

    let efficiency = match cfg.methods.iter().position(|m| *m == Method::Ml) {
        Some(k) if !used.is_empty() => {
            let ml = &methods[k].estimates;
            methods
                .iter()
                .map(|m| {
                    Ok(Efficiency {
                        rrmse: relative_rrmse(&m.estimates, ml, &cfg.theta_true)?,
                        global: global_efficiency(&m.estimates, ml, &cfg.theta_true).ok(),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => Vec::new(),
    };

    Ok(StudyResult {
        family: cfg.family,
        theta_true: cfg.theta_true,
        n: cfg.n,
        seed: cfg.seed,
        replicates_requested: cfg.replicates,
        replicates_used: used,
        dropped,
        methods,
        efficiency,
    })
}

fn check_paired(method: &[ParamVector], ml: &[ParamVector]) -> Result<()> {
    if method.len() != ml.len() {
        return Err(Error::DimensionMismatch {
            expected: ml.len(),
            got: method.len(),
        });
    }
    if ml.is_empty() {
        return Err(Error::Domain("no replicates to compare".into()));
    }
    Ok(())
}

fn rmse(est: &[ParamVector], truth: &ParamVector) -> [f64; 3] {
    let t = truth.to_array();
    let mut acc = [0.0; 3];
    for e in est {
        let e = e.to_array();
        for k in 0..3 {
            acc[k] += (e[k] - t[k]).powi(2);
        }
    }
    acc.map(|s| (s / est.len() as f64).sqrt())
}

/// Per-parameter `RMSE_ML / RMSE_method` in the order `[τ², σ², φ]`.
pub fn relative_rrmse(method: &[ParamVector], ml: &[ParamVector], truth: &ParamVector) -> Result<[f64; 3]> {
    check_paired(method, ml)?;
    let num = rmse(ml, truth);
    let den = rmse(method, truth);
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = match (num[k] == 0.0, den[k] == 0.0) {
            (true, true) => 1.0,
            (false, true) => f64::INFINITY,
            _ => num[k] / den[k],
        };
    }
    Ok(out)
}

/// `R⁻¹ Σ (θ̂ − θ)(θ̂ − θ)ᵀ`.
pub fn moment_matrix(est: &[ParamVector], truth: &ParamVector) -> [[f64; 3]; 3] {
    let t = truth.to_array();
    let mut g = [[0.0; 3]; 3];
    for e in est {
        let e = e.to_array();
        let d = [e[0] - t[0], e[1] - t[1], e[2] - t[2]];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += d[i] * d[j];
            }
        }
    }
    let r = est.len() as f64;
    g.map(|row| row.map(|v| v / r))
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant<const P: usize>(mut m: [[f64; P]; P]) -> f64 {
    let mut det = 1.0;
    for c in 0..P {
        let p = (c..P)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .unwrap_or(c);
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..P {
            let f = m[r][c] / m[c][c];
            for k in c..P {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

/// `(|G_ML|^{1/2} / |G_method|^{1/2})^{1/p}` with `p = 3`.
pub fn global_efficiency(method: &[ParamVector], ml: &[ParamVector], truth: &ParamVector) -> Result<f64> {
    check_paired(method, ml)?;
    if ml.len() < 4 {
        return Err(Error::Domain(format!(
            "global efficiency needs at least 4 replicates, got {}",
            ml.len()
        )));
    }
    let det_ml = determinant(moment_matrix(ml, truth));
    let det_m = determinant(moment_matrix(method, truth));
    for d in [det_ml, det_m] {
        if !(d > 0.0) {
            return Err(Error::SingularMoment(d));
        }
    }
    Ok((det_ml / det_m).sqrt().powf(1.0 / 3.0))
}

/// Bootstrap standard errors with the refitted estimates behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Sample standard deviations of the estimates.
    pub std_errors: ParamVector,
    pub estimates: Vec<ParamVector>,
    pub failures: usize,
}

/// Simulates `b` datasets from `theta_hat` on `sites` and refits each with `refit`.
///
/// `refit` receives the simulated dataset and a generator private to that replicate.
pub fn parametric_bootstrap_with<R, F>(
    sites: &SiteSet,
    family: CorrelationFamily,
    theta_hat: &ParamVector,
    b: usize,
    rng: &mut R,
    refit: F,
) -> Result<BootstrapResult>
where
    R: Rng + ?Sized,
    F: Fn(&SiteSet, &mut ChaCha8Rng) -> Result<ParamVector> + Sync,
{
    if b < 2 {
        return Err(Error::Config("bootstrap needs at least 2 replicates".into()));
    }
    theta_hat.validate()?;
    let l = dense::cholesky(&covariance_matrix(sites.coords(), family, theta_hat))?;
    let seed = rng.next_u64();
    let outcomes: Vec<Result<ParamVector>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let data = simulate_on(sites, &l, seed, r as u64)?;
            let mut fit_rng = substream(seed, STREAM_BOOTSTRAP, r as u64);
            refit(&data, &mut fit_rng)
        })
        .collect();
    let mut estimates = Vec::with_capacity(b);
    for outcome in outcomes {
        match outcome {
            Ok(theta) => estimates.push(theta),
            Err(e @ (Error::Config(_) | Error::NoActivePairs)) => return Err(e),
            Err(_) => {}
        }
    }
    let required = b.div_ceil(2).max(2);
    if estimates.len() < required {
        return Err(Error::TooFewReplicates {
            successes: estimates.len(),
            required,
        });
    }
    Ok(BootstrapResult {
        std_errors: ParamVector::from_array(sample_std(&estimates)),
        failures: b - estimates.len(),
        estimates,
    })
}

/// Parametric bootstrap refitting with the method in `spec`.
pub fn parametric_bootstrap<R: Rng + ?Sized>(
    sites: &SiteSet,
    spec: &ObjectiveSpec,
    theta_hat: &ParamVector,
    b: usize,
    opts: &OptimOptions,
    rng: &mut R,
) -> Result<BootstrapResult> {
    spec.method.validate()?;
    opts.validate()?;
    parametric_bootstrap_with(sites, spec.family, theta_hat, b, rng, |data, fit_rng| {
        Ok(fit(data, spec, opts, fit_rng)?.theta_hat)
    })
}

fn sample_std(est: &[ParamVector]) -> [f64; 3] {
    let n = est.len() as f64;
    // shift by the first estimate so identical inputs give exactly zero
    let origin = est[0].to_array();
    let dev: Vec<[f64; 3]> = est
        .iter()
        .map(|e| {
            let e = e.to_array();
            [e[0] - origin[0], e[1] - origin[1], e[2] - origin[2]]
        })
        .collect();
    let mut mean = [0.0; 3];
    for d in &dev {
        for k in 0..3 {
            mean[k] += d[k];
        }
    }
    let mean = mean.map(|m| m / n);
    let mut ss = [0.0; 3];
    for d in &dev {
        for k in 0..3 {
            ss[k] += (d[k] - mean[k]).powi(2);
        }
    }
    ss.map(|s| (s / (n - 1.0)).sqrt())
}

const TABLE_ROWS: [(&str, Option<usize>); 4] = [
    ("sigma2", Some(1)),
    ("range", Some(2)),
    ("tau2", Some(0)),
    ("global", None),
];

/// Efficiency table: one row per parameter plus `global`, one column per method.
pub fn write_efficiency_csv<W: Write>(result: &StudyResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["parameter".to_string()];
    header.extend(result.methods.iter().map(|m| m.label.clone()));
    w.write_record(&header)?;
    for (name, idx) in TABLE_ROWS {
        let mut row = vec![name.to_string()];
        for eff in &result.efficiency {
            let v = match idx {
                Some(k) => Some(eff.rrmse[k]),
                None => eff.global,
            };
            row.push(v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format replicate estimates.
pub fn write_estimates_csv<W: Write>(result: &StudyResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["replicate", "method", "tau2", "sigma2", "range", "iterations", "converged"])?;
    for m in &result.methods {
        for (k, &r) in result.replicates_used.iter().enumerate() {
            let e = m.estimates[k];
            w.write_record([
                r.to_string(),
                m.label.clone(),
                e.tau2.to_string(),
                e.sigma2.to_string(),
                e.range.to_string(),
                m.iterations[k].to_string(),
                m.converged[k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
