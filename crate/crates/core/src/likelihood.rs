//! Objective functions on the block-likelihood spectrum: the full Gaussian
//! log-likelihood, pairwise (PCL), bi-conditional (bi-CL) and block (BCL)
//! composite likelihoods.
//!
//! All log-densities omit the `−(dim/2)·log 2π` constant. PCL and bi-CL are
//! closed-form and never call into [`crate::dense`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{self, SymMatrix};
use crate::error::{Error, Result};
use crate::geom::{Point, SiteSet};
use crate::models::{CorrelationFamily, ParamVector};
use crate::partition::{
    block_weight, build_cluster_blocks, build_configuration_ensemble, pair_weight, BlockPartition,
    PairConfiguration,
};

/// Underflow guard for conditional determinants.
pub const ETA_FLOOR: f64 = 1e-300;

/// Covariance matrix `σ²R(φ) + τ²I` of the given coordinates.
pub fn covariance_matrix(coords: &[Point], family: CorrelationFamily, theta: &ParamVector) -> SymMatrix {
    let sill = theta.sill();
    SymMatrix::from_fn(coords.len(), |i, j| {
        if i == j {
            sill
        } else {
            let h = coords[i].distance(coords[j]);
            let nugget = if h == 0.0 { theta.tau2 } else { 0.0 };
            theta.sigma2 * family.rho(h, theta.range) + nugget
        }
    })
}

fn infeasible_from_dense(e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite { row, pivot } => Error::EvaluationInfeasible(format!(
            "covariance matrix is not positive definite (pivot {pivot:e} at row {row})"
        )),
        other => other,
    }
}

/// Full log-likelihood `−½(log|Σ| + Zᵀ Σ⁻¹ Z)`.
pub fn full_loglik(sites: &SiteSet, family: CorrelationFamily, theta: &ParamVector) -> Result<f64> {
    theta.validate()?;
    let z = sites.data()?;
    if z.is_empty() {
        return Err(Error::Domain("full likelihood needs at least one site".into()));
    }
    sites.check_distinct()?;
    dense::gaussian_loglik(covariance_matrix(sites.coords(), family, theta), z)
        .map_err(infeasible_from_dense)
}

/// Bivariate log-density of `(z_i, z_j)` with variances `sill` and covariance `cov`.
#[inline]
fn pair_loglik(sill: f64, cov: f64, zi: f64, zj: f64) -> Result<f64> {
    let det = sill * sill - cov * cov;
    if !(det > 0.0) {
        return Err(Error::EvaluationInfeasible(format!(
            "pairwise determinant {det:e} is not positive"
        )));
    }
    Ok(-0.5 * (det.ln() + (sill * (zi * zi + zj * zj) - 2.0 * cov * zi * zj) / det))
}

fn check_threshold(d: f64) -> Result<()> {
    if d.is_nan() || d < 0.0 {
        return Err(Error::Config(format!("distance threshold must be >= 0, got {d}")));
    }
    Ok(())
}

/// Pairwise composite likelihood over unordered pairs closer than `d_s`.
pub fn pcl_objective(
    sites: &SiteSet,
    family: CorrelationFamily,
    theta: &ParamVector,
    d_s: f64,
) -> Result<f64> {
    theta.validate()?;
    check_threshold(d_s)?;
    let z = sites.data()?;
    let coords = sites.coords();
    let sill = theta.sill();
    let mut total = 0.0;
    let mut active = 0usize;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let h = coords[i].distance(coords[j]);
            if h < d_s {
                let cov = theta.sigma2 * family.rho(h, theta.range);
                total += pair_loglik(sill, cov, z[i], z[j])?;
                active += 1;
            }
        }
    }
    if active == 0 {
        return Err(Error::NoActivePairs);
    }
    Ok(total)
}

/// The six correlations entering one conditional term `Z_i | Z_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockRhos {
    /// `ρ(‖s_i^a − s_i^b‖)`
    pub ii_ab: f64,
    /// `ρ(‖s_j^a − s_j^b‖)`
    pub jj_ab: f64,
    /// `ρ(‖s_i^a − s_j^a‖)`
    pub ij_aa: f64,
    /// `ρ(‖s_i^a − s_j^b‖)`
    pub ij_ab: f64,
    /// `ρ(‖s_i^b − s_j^a‖)`
    pub ij_ba: f64,
    /// `ρ(‖s_i^b − s_j^b‖)`
    pub ij_bb: f64,
}

/// Conditioning coefficients, conditional mean and covariance of `Z_i | Z_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiTermIntermediates {
    pub psi11: f64,
    pub psi12: f64,
    pub psi21: f64,
    pub psi22: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub xi11: f64,
    pub xi12: f64,
    pub xi22: f64,
    pub eta: f64,
}

/// Closed-form conditional log-density of block `i` given block `j`.
///
/// `zi = (Z_i^a, Z_i^b)`, `zj = (Z_j^a, Z_j^b)`.
#[inline]
pub fn bi_term_closed_form(
    r: &BlockRhos,
    theta: &ParamVector,
    zi: (f64, f64),
    zj: (f64, f64),
) -> Result<(f64, BiTermIntermediates)> {
    let s2 = theta.sigma2;
    let v = theta.sill();
    let denom = v * v - (s2 * r.jj_ab).powi(2);
    if !(denom > ETA_FLOOR) {
        return Err(Error::EvaluationInfeasible(format!(
            "conditioning block is degenerate (determinant {denom:e})"
        )));
    }
    let psi11 = s2 * (v * r.ij_aa - s2 * r.ij_ab * r.jj_ab) / denom;
    let psi21 = s2 * (v * r.ij_ba - s2 * r.ij_bb * r.jj_ab) / denom;
    let psi12 = s2 * (v * r.ij_ab - s2 * r.ij_aa * r.jj_ab) / denom;
    let psi22 = s2 * (v * r.ij_bb - s2 * r.ij_ba * r.jj_ab) / denom;

    let xi11 = theta.tau2 + s2 * (1.0 - psi11 * r.ij_aa - psi12 * r.ij_ab);
    let xi12 = s2 * (r.ii_ab - psi11 * r.ij_ba - psi12 * r.ij_bb);
    let xi22 = theta.tau2 + s2 * (1.0 - psi21 * r.ij_ba - psi22 * r.ij_bb);
    let mu1 = psi11 * zj.0 + psi12 * zj.1;
    let mu2 = psi21 * zj.0 + psi22 * zj.1;
    let eta = xi11 * xi22 - xi12 * xi12;
    if !(eta > ETA_FLOOR) || !(xi11 > 0.0) {
        return Err(Error::EvaluationInfeasible(format!(
            "conditional covariance is degenerate (eta {eta:e})"
        )));
    }
    let (ea, eb) = (zi.0 - mu1, zi.1 - mu2);
    let value = -0.5 * (eta.ln() + (xi22 * ea * ea + xi11 * eb * eb - 2.0 * xi12 * ea * eb) / eta);
    Ok((
        value,
        BiTermIntermediates {
            psi11,
            psi12,
            psi21,
            psi22,
            mu1,
            mu2,
            xi11,
            xi12,
            xi22,
            eta,
        },
    ))
}

/// Conditional term `ℓ_ij` for blocks `i` and `j` of a configuration.
pub fn bi_term(
    cfg: &PairConfiguration,
    i: usize,
    j: usize,
    sites: &SiteSet,
    family: CorrelationFamily,
    theta: &ParamVector,
) -> Result<(f64, BiTermIntermediates)> {
    theta.validate()?;
    if i == j || i >= cfg.len() || j >= cfg.len() {
        return Err(Error::Domain(format!("invalid block pair ({i}, {j})")));
    }
    let z = sites.data()?;
    let p = |k: usize| sites.point(k);
    let rho = |a: usize, b: usize| family.rho(p(a).distance(p(b)), theta.range);
    let (ia, ib, ja, jb) = (cfg.a(i), cfg.b(i), cfg.a(j), cfg.b(j));
    let r = BlockRhos {
        ii_ab: rho(ia, ib),
        jj_ab: rho(ja, jb),
        ij_aa: rho(ia, ja),
        ij_ab: rho(ia, jb),
        ij_ba: rho(ib, ja),
        ij_bb: rho(ib, jb),
    };
    bi_term_closed_form(&r, theta, (z[ia], z[ib]), (z[ja], z[jb]))
}

/// Bi-conditional likelihood summed over configurations and ordered block pairs.
pub fn bi_cl_objective(
    ensemble: &[PairConfiguration],
    sites: &SiteSet,
    family: CorrelationFamily,
    theta: &ParamVector,
    d_s: f64,
) -> Result<f64> {
    check_threshold(d_s)?;
    if ensemble.is_empty() {
        return Err(Error::Domain("configuration ensemble is empty".into()));
    }
    let mut total = 0.0;
    let mut active = 0usize;
    for cfg in ensemble {
        for i in 0..cfg.len() {
            for j in 0..cfg.len() {
                if i != j && pair_weight(cfg, i, j, sites, d_s)? == 1.0 {
                    total += bi_term(cfg, i, j, sites, family, theta)?.0;
                    active += 1;
                }
            }
        }
    }
    if active == 0 {
        return Err(Error::NoActivePairs);
    }
    Ok(total)
}

/// Joint log-likelihood of the data in blocks `i` and `j`.
pub fn bcl_pair_loglik(
    part: &BlockPartition,
    i: usize,
    j: usize,
    sites: &SiteSet,
    family: CorrelationFamily,
    theta: &ParamVector,
) -> Result<f64> {
    theta.validate()?;
    if i == j || i >= part.len() || j >= part.len() {
        return Err(Error::Domain(format!("invalid block pair ({i}, {j})")));
    }
    let z = sites.data()?;
    let idx: Vec<usize> = part.blocks[i].iter().chain(&part.blocks[j]).copied().collect();
    let coords: Vec<Point> = idx.iter().map(|&k| sites.point(k)).collect();
    let zz: Vec<f64> = idx.iter().map(|&k| z[k]).collect();
    dense::gaussian_loglik(covariance_matrix(&coords, family, theta), &zz).map_err(infeasible_from_dense)
}

/// Block likelihood summed over unordered block pairs with centroids closer than `threshold`.
pub fn bcl_objective(
    part: &BlockPartition,
    sites: &SiteSet,
    family: CorrelationFamily,
    theta: &ParamVector,
    threshold: f64,
) -> Result<f64> {
    check_threshold(threshold)?;
    if part.len() < 2 {
        return Err(Error::Domain("block likelihood needs at least two blocks".into()));
    }
    let mut total = 0.0;
    let mut active = 0usize;
    for i in 0..part.len() {
        for j in i + 1..part.len() {
            if block_weight(part, i, j, threshold)? == 1.0 {
                total += bcl_pair_loglik(part, i, j, sites, family, theta)?;
                active += 1;
            }
        }
    }
    if active == 0 {
        return Err(Error::NoActivePairs);
    }
    Ok(total)
}

const fn default_configurations() -> usize {
    5
}

/// Estimation method with its weighting inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    /// Full maximum likelihood.
    Ml,
    /// Pairwise likelihood with distance threshold `ds`.
    Pcl { ds: f64 },
    /// Bi-conditional likelihood over `configurations` random pairings.
    Bicl {
        ds: f64,
        #[serde(default = "default_configurations")]
        configurations: usize,
    },
    /// Block likelihood over `blocks` k-means clusters, centroid threshold `threshold`.
    Bcl { blocks: usize, threshold: f64 },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Ml => "ML".to_string(),
            Method::Pcl { ds } => format!("PCL(ds={ds})"),
            Method::Bicl { ds, configurations } => format!("bi-CL(ds={ds},C={configurations})"),
            Method::Bcl { blocks, threshold } => format!("BCL{blocks}(threshold={threshold})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Method::Ml => Ok(()),
            Method::Pcl { ds } => check_threshold(ds),
            Method::Bicl { ds, configurations } => {
                check_threshold(ds)?;
                if configurations == 0 {
                    return Err(Error::Config("bi-CL needs at least one configuration".into()));
                }
                Ok(())
            }
            Method::Bcl { blocks, threshold } => {
                check_threshold(threshold)?;
                if blocks < 2 {
                    return Err(Error::Config("BCL needs at least two blocks".into()));
                }
                Ok(())
            }
        }
    }
}

/// A method paired with a correlation family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub family: CorrelationFamily,
    #[serde(flatten)]
    pub method: Method,
}

impl ObjectiveSpec {
    /// Builds partitions (drawing from `rng` where the method needs them) and
    /// caches all geometry for repeated evaluation.
    pub fn prepare<R: Rng + ?Sized>(&self, sites: &SiteSet, rng: &mut R) -> Result<Objective> {
        self.method.validate()?;
        match self.method {
            Method::Ml => Objective::full(sites, self.family),
            Method::Pcl { ds } => Objective::pairwise(sites, self.family, ds),
            Method::Bicl { ds, configurations } => {
                let ensemble = build_configuration_ensemble(sites, configurations, rng)?;
                Objective::bi_conditional(sites, self.family, &ensemble, ds)
            }
            Method::Bcl { blocks, threshold } => {
                let part = build_cluster_blocks(sites, blocks, rng)?;
                Objective::block(sites, self.family, &part, threshold)
            }
        }
    }
}

#[derive(Clone, Debug)]
struct PairGeom {
    i: u32,
    j: u32,
    h: f64,
}

/// One unordered active pair of two-site blocks `(p, q)`, both directions evaluated.
#[derive(Clone, Debug)]
struct BiPairGeom {
    p: u32,
    q: u32,
    /// `‖a_p − a_q‖`, `‖a_p − b_q‖`, `‖b_p − a_q‖`, `‖b_p − b_q‖`
    h: [f64; 4],
}

#[derive(Clone, Debug)]
struct TwoSiteBlock {
    a: u32,
    b: u32,
    h: f64,
}

#[derive(Clone, Debug)]
struct BlockPairGeom {
    indices: Vec<usize>,
    dist: SymMatrix,
}

#[derive(Clone, Debug)]
enum Prepared {
    Full { dist: SymMatrix },
    Pairwise { pairs: Vec<PairGeom> },
    BiConditional { blocks: Vec<TwoSiteBlock>, pairs: Vec<BiPairGeom> },
    Block { pairs: Vec<BlockPairGeom> },
}

/// An objective with its geometry precomputed, evaluated repeatedly over `θ`.
#[derive(Clone, Debug)]
pub struct Objective {
    family: CorrelationFamily,
    data: Vec<f64>,
    prepared: Prepared,
}

fn distance_matrix(coords: &[Point]) -> SymMatrix {
    SymMatrix::from_fn(coords.len(), |i, j| coords[i].distance(coords[j]))
}

impl Objective {
    pub fn full(sites: &SiteSet, family: CorrelationFamily) -> Result<Self> {
        let data = sites.data()?.to_vec();
        if data.is_empty() {
            return Err(Error::Domain("full likelihood needs at least one site".into()));
        }
        sites.check_distinct()?;
        Ok(Objective {
            family,
            data,
            prepared: Prepared::Full {
                dist: distance_matrix(sites.coords()),
            },
        })
    }

    pub fn pairwise(sites: &SiteSet, family: CorrelationFamily, d_s: f64) -> Result<Self> {
        check_threshold(d_s)?;
        let data = sites.data()?.to_vec();
        let coords = sites.coords();
        let mut pairs = Vec::new();
        for i in 0..coords.len() {
            for j in i + 1..coords.len() {
                let h = coords[i].distance(coords[j]);
                if h < d_s {
                    pairs.push(PairGeom {
                        i: i as u32,
                        j: j as u32,
                        h,
                    });
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::NoActivePairs);
        }
        Ok(Objective {
            family,
            data,
            prepared: Prepared::Pairwise { pairs },
        })
    }

    pub fn bi_conditional(
        sites: &SiteSet,
        family: CorrelationFamily,
        ensemble: &[PairConfiguration],
        d_s: f64,
    ) -> Result<Self> {
        check_threshold(d_s)?;
        if ensemble.is_empty() {
            return Err(Error::Domain("configuration ensemble is empty".into()));
        }
        let data = sites.data()?.to_vec();
        let pt = |k: usize| sites.point(k);
        let mut blocks = Vec::new();
        let mut pairs = Vec::new();
        for cfg in ensemble {
            let base = blocks.len();
            for &(a, b) in &cfg.blocks {
                if a >= sites.len() || b >= sites.len() {
                    return Err(Error::Data(format!("block ({a}, {b}) is out of range")));
                }
                blocks.push(TwoSiteBlock {
                    a: a as u32,
                    b: b as u32,
                    h: pt(a).distance(pt(b)),
                });
            }
            for p in 0..cfg.len() {
                let (ap, bp) = (pt(cfg.a(p)), pt(cfg.b(p)));
                for q in p + 1..cfg.len() {
                    let (aq, bq) = (pt(cfg.a(q)), pt(cfg.b(q)));
                    let haa = ap.distance(aq);
                    if haa < d_s {
                        pairs.push(BiPairGeom {
                            p: (base + p) as u32,
                            q: (base + q) as u32,
                            h: [haa, ap.distance(bq), bp.distance(aq), bp.distance(bq)],
                        });
                    }
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::NoActivePairs);
        }
        Ok(Objective {
            family,
            data,
            prepared: Prepared::BiConditional { blocks, pairs },
        })
    }

    pub fn block(
        sites: &SiteSet,
        family: CorrelationFamily,
        part: &BlockPartition,
        threshold: f64,
    ) -> Result<Self> {
        check_threshold(threshold)?;
        if part.len() < 2 {
            return Err(Error::Domain("block likelihood needs at least two blocks".into()));
        }
        let data = sites.data()?.to_vec();
        sites.check_distinct()?;
        let mut pairs = Vec::new();
        for i in 0..part.len() {
            for j in i + 1..part.len() {
                if block_weight(part, i, j, threshold)? == 1.0 {
                    let indices: Vec<usize> =
                        part.blocks[i].iter().chain(&part.blocks[j]).copied().collect();
                    let coords: Vec<Point> = indices.iter().map(|&k| sites.point(k)).collect();
                    pairs.push(BlockPairGeom {
                        dist: distance_matrix(&coords),
                        indices,
                    });
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::NoActivePairs);
        }
        Ok(Objective {
            family,
            data,
            prepared: Prepared::Block { pairs },
        })
    }

    pub fn family(&self) -> CorrelationFamily {
        self.family
    }

    /// Number of active terms (pairs, ordered block pairs, or block pairs).
    pub fn active_terms(&self) -> usize {
        match &self.prepared {
            Prepared::Full { .. } => 1,
            Prepared::Pairwise { pairs } => pairs.len(),
            Prepared::BiConditional { pairs, .. } => 2 * pairs.len(),
            Prepared::Block { pairs } => pairs.len(),
        }
    }

    pub fn evaluate(&self, theta: &ParamVector) -> Result<f64> {
        theta.validate()?;
        let family = self.family;
        let z = &self.data;
        match &self.prepared {
            Prepared::Full { dist } => {
                let cov = covariance_from_distances(dist, family, theta);
                dense::gaussian_loglik(cov, z).map_err(infeasible_from_dense)
            }
            Prepared::Pairwise { pairs } => {
                let sill = theta.sill();
                pairs.iter().try_fold(0.0, |acc, g| {
                    let cov = theta.sigma2 * family.rho(g.h, theta.range);
                    Ok(acc + pair_loglik(sill, cov, z[g.i as usize], z[g.j as usize])?)
                })
            }
            Prepared::BiConditional { blocks, pairs } => {
                let within: Vec<f64> = blocks.iter().map(|b| family.rho(b.h, theta.range)).collect();
                let mut total = 0.0;
                for g in pairs {
                    let (p, q) = (g.p as usize, g.q as usize);
                    let (bp, bq) = (&blocks[p], &blocks[q]);
                    let [aa, ab, ba, bb] = g.h.map(|h| family.rho(h, theta.range));
                    let zp = (z[bp.a as usize], z[bp.b as usize]);
                    let zq = (z[bq.a as usize], z[bq.b as usize]);
                    let forward = BlockRhos {
                        ii_ab: within[p],
                        jj_ab: within[q],
                        ij_aa: aa,
                        ij_ab: ab,
                        ij_ba: ba,
                        ij_bb: bb,
                    };
                    let backward = BlockRhos {
                        ii_ab: within[q],
                        jj_ab: within[p],
                        ij_aa: aa,
                        ij_ab: ba,
                        ij_ba: ab,
                        ij_bb: bb,
                    };
                    total += bi_term_closed_form(&forward, theta, zp, zq)?.0;
                    total += bi_term_closed_form(&backward, theta, zq, zp)?.0;
                }
                Ok(total)
            }
            Prepared::Block { pairs } => pairs.iter().try_fold(0.0, |acc, g| {
                let cov = covariance_from_distances(&g.dist, family, theta);
                let zz: Vec<f64> = g.indices.iter().map(|&k| z[k]).collect();
                let v = dense::gaussian_loglik(cov, &zz).map_err(infeasible_from_dense)?;
                Ok(acc + v)
            }),
        }
    }
}

fn covariance_from_distances(dist: &SymMatrix, family: CorrelationFamily, theta: &ParamVector) -> SymMatrix {
    let n = dist.order();
    let sill = theta.sill();
    let mut out = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..i {
            let h = dist.get(i, j);
            let nugget = if h == 0.0 { theta.tau2 } else { 0.0 };
            out.set(i, j, theta.sigma2 * family.rho(h, theta.range) + nugget);
        }
        out.set(i, i, sill);
    }
    out
}
