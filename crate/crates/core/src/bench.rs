//! Wall-clock comparison of a bi-CL evaluation against block-likelihood factorization work.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::geom::{PerturbedGrid, SiteSet};
use crate::likelihood::{covariance_matrix, Objective};
use crate::models::{CorrelationFamily, ParamVector};
use crate::partition::build_pair_configuration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMethod {
    Bicl,
    /// Eight factorizations of order `n/4`.
    Bcl8,
    /// Sixteen factorizations of order `n/8`.
    Bcl16,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [BenchMethod::Bicl, BenchMethod::Bcl8, BenchMethod::Bcl16];

    fn block_count(self) -> Option<usize> {
        match self {
            BenchMethod::Bicl => None,
            BenchMethod::Bcl8 => Some(8),
            BenchMethod::Bcl16 => Some(16),
        }
    }
}

impl std::str::FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bicl" => Ok(BenchMethod::Bicl),
            "bcl8" => Ok(BenchMethod::Bcl8),
            "bcl16" => Ok(BenchMethod::Bcl16),
            other => Err(Error::Config(format!("unknown bench method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub ds: f64,
    /// Each timing is the minimum over this many runs.
    pub repeats: usize,
    pub methods: Vec<BenchMethod>,
    pub family: CorrelationFamily,
    pub theta: ParamVector,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            ds: 0.1,
            repeats: 3,
            methods: BenchMethod::ALL.to_vec(),
            family: CorrelationFamily::Exponential,
            theta: ParamVector {
                tau2: 0.1,
                sigma2: 1.0,
                range: 0.1,
            },
        }
    }
}

/// Seconds per method for one sample size; `None` for methods not requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub bicl_terms: Option<usize>,
    pub bicl_seconds: Option<f64>,
    pub bcl8_seconds: Option<f64>,
    pub bcl16_seconds: Option<f64>,
}

/// `n` jittered sites on a grid of spacing `1/⌈√n⌉` over the unit square.
pub fn bench_sites<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SiteSet> {
    let k = (n as f64).sqrt().ceil().max(1.0);
    let spacing = 1.0 / k;
    PerturbedGrid {
        spacing,
        jitter_halfwidth: spacing / 3.0,
        extent: 1.0,
    }
    .generate(n, rng)
}

fn min_seconds(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Time of one bi-CL evaluation over a single pair configuration, with its term count.
pub fn time_bicl<R: Rng + ?Sized>(sites: &SiteSet, opts: &BenchOptions, rng: &mut R) -> Result<(f64, usize)> {
    let cfg = build_pair_configuration(sites, rng)?;
    let objective = Objective::bi_conditional(sites, opts.family, &[cfg], opts.ds)?;
    let secs = min_seconds(opts.repeats, || {
        std::hint::black_box(objective.evaluate(&opts.theta)?);
        Ok(())
    })?;
    Ok((secs, objective.active_terms()))
}

/// Time to factorize the `blocks` covariance matrices of adjacent block pairs, each of
/// order `2n / blocks`.
///
/// Matrix assembly is excluded, so this is a lower bound on one block-likelihood evaluation.
pub fn time_block_factorizations(sites: &SiteSet, blocks: usize, opts: &BenchOptions) -> Result<f64> {
    let n = sites.len();
    let size = n / blocks;
    if size == 0 {
        return Err(Error::Domain(format!("{n} sites cannot fill {blocks} blocks")));
    }
    let matrices: Vec<_> = (0..blocks)
        .map(|b| {
            let coords: Vec<_> = (b * size..(b + 2) * size).map(|k| sites.point(k % n)).collect();
            covariance_matrix(&coords, opts.family, &opts.theta)
        })
        .collect();
    min_seconds(opts.repeats, || {
        for m in &matrices {
            std::hint::black_box(dense::cholesky(m)?);
        }
        Ok(())
    })
}

pub fn bench_timing<R: Rng + ?Sized>(ns: &[usize], opts: &BenchOptions, rng: &mut R) -> Result<Vec<TimingRow>> {
    if ns.iter().any(|&n| n < 16) {
        return Err(Error::Config("bench sizes must be at least 16".into()));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let sites = bench_sites(n, rng)?;
        // values do not affect the cost of an evaluation
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let sites = sites.attach(z)?;
        let mut row = TimingRow {
            n,
            bicl_terms: None,
            bicl_seconds: None,
            bcl8_seconds: None,
            bcl16_seconds: None,
        };
        for &m in &opts.methods {
            match m.block_count() {
                None => {
                    let (secs, terms) = time_bicl(&sites, opts, rng)?;
                    row.bicl_seconds = Some(secs);
                    row.bicl_terms = Some(terms);
                }
                Some(blocks) => {
                    let secs = time_block_factorizations(&sites, blocks, opts)?;
                    if blocks == 8 {
                        row.bcl8_seconds = Some(secs);
                    } else {
                        row.bcl16_seconds = Some(secs);
                    }
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_timing_csv<W: std::io::Write>(rows: &[TimingRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n", "bicl_terms", "bicl_seconds", "bcl8_seconds", "bcl16_seconds"])?;
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.6e}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.bicl_terms.map(|t| t.to_string()).unwrap_or_default(),
            cell(r.bicl_seconds),
            cell(r.bcl8_seconds),
            cell(r.bcl16_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}
