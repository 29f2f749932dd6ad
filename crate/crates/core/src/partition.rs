//! Two-site block configurations for the bi-conditional likelihood, cluster
//! blocks for the block likelihood, and their 0/1 weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, SiteSet};

/// Partition of the sites into labelled two-site blocks `(a, b)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairConfiguration {
    pub blocks: Vec<(usize, usize)>,
}

impl PairConfiguration {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Site index labelled `a` in block `i`.
    pub fn a(&self, i: usize) -> usize {
        self.blocks[i].0
    }

    pub fn b(&self, i: usize) -> usize {
        self.blocks[i].1
    }

    /// Checks that the blocks cover `0..n` exactly once each.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut all: Vec<usize> = Vec::with_capacity(2 * self.blocks.len());
        for &(a, b) in &self.blocks {
            if a == b {
                return Err(Error::Data(format!("block repeats site {a}")));
            }
            all.push(a);
            all.push(b);
        }
        all.sort_unstable();
        if all.len() != n || all.iter().enumerate().any(|(k, &v)| k != v) {
            return Err(Error::Data(format!(
                "pair configuration is not a partition of 0..{n}"
            )));
        }
        Ok(())
    }
}

/// Disjoint covering index blocks with their coordinate centroids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub blocks: Vec<Vec<usize>>,
    pub centroids: Vec<Point>,
}

impl BlockPartition {
    /// Builds a partition from index blocks, computing centroids from `sites`.
    pub fn from_blocks(sites: &SiteSet, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; sites.len()];
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::Data("empty block".into()));
            }
            for &k in block {
                if k >= sites.len() || std::mem::replace(&mut seen[k], true) {
                    return Err(Error::Data(format!("site {k} is out of range or repeated")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Data("blocks do not cover every site".into()));
        }
        let centroids = blocks.iter().map(|b| centroid(sites, b)).collect();
        Ok(BlockPartition { blocks, centroids })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

fn centroid(sites: &SiteSet, members: &[usize]) -> Point {
    let n = members.len() as f64;
    let (sx, sy) = members.iter().fold((0.0, 0.0), |(sx, sy), &k| {
        let p = sites.point(k);
        (sx + p.x, sy + p.y)
    });
    Point::new(sx / n, sy / n)
}

/// Indices that take part in pairing: all of them, minus the last when `n` is odd.
pub fn pairable_count(n: usize) -> usize {
    n - n % 2
}

/// Groups, for each seed point in order, the two nearest unassigned sites.
/// The nearer of the two is labelled `a`; ties go to the lower index.
pub fn pair_configuration_from_seeds(sites: &SiteSet, seeds: &[Point]) -> Result<PairConfiguration> {
    let n = pairable_count(sites.len());
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 sites, got {}", sites.len())));
    }
    if seeds.len() != n / 2 {
        return Err(Error::DimensionMismatch {
            expected: n / 2,
            got: seeds.len(),
        });
    }
    let coords = &sites.coords()[..n];
    let mut free: Vec<usize> = (0..n).collect();
    let mut blocks = Vec::with_capacity(n / 2);
    for &seed in seeds {
        // (squared distance, position in `free`) of the two nearest free sites
        let mut first = (f64::INFINITY, usize::MAX);
        let mut second = (f64::INFINITY, usize::MAX);
        for (pos, &k) in free.iter().enumerate() {
            let d = coords[k].distance_sq(seed);
            if d < first.0 {
                second = first;
                first = (d, pos);
            } else if d < second.0 {
                second = (d, pos);
            }
        }
        let (a, b) = (free[first.1], free[second.1]);
        blocks.push((a, b));
        // `free` stays sorted, so strict comparisons above keep the lowest index on ties
        let (hi, lo) = if first.1 > second.1 {
            (first.1, second.1)
        } else {
            (second.1, first.1)
        };
        free.remove(hi);
        free.remove(lo);
    }
    Ok(PairConfiguration { blocks })
}

/// Random two-site configuration: `n/2` seed points uniform over the sites'
/// bounding box, each claiming its two nearest unassigned sites.
pub fn build_pair_configuration<R: Rng + ?Sized>(
    sites: &SiteSet,
    rng: &mut R,
) -> Result<PairConfiguration> {
    let n = pairable_count(sites.len());
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 sites, got {}", sites.len())));
    }
    let (lo, hi) = sites.bounding_box().expect("non-empty");
    let seeds: Vec<Point> = (0..n / 2)
        .map(|_| {
            Point::new(
                lo.x + (hi.x - lo.x) * rng.random::<f64>(),
                lo.y + (hi.y - lo.y) * rng.random::<f64>(),
            )
        })
        .collect();
    pair_configuration_from_seeds(sites, &seeds)
}

/// `count` configurations drawn one after the other from the same stream.
pub fn build_configuration_ensemble<R: Rng + ?Sized>(
    sites: &SiteSet,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PairConfiguration>> {
    if count == 0 {
        return Err(Error::Domain("configuration count must be >= 1".into()));
    }
    (0..count).map(|_| build_pair_configuration(sites, rng)).collect()
}

const KMEANS_MAX_ITER: usize = 100;

/// Lloyd k-means on the coordinates, seeded with `m` distinct sites.
pub fn build_cluster_blocks<R: Rng + ?Sized>(
    sites: &SiteSet,
    m: usize,
    rng: &mut R,
) -> Result<BlockPartition> {
    let n = sites.len();
    if m == 0 || m > n {
        return Err(Error::Domain(format!("block count {m} must lie in 1..={n}")));
    }
    let coords = sites.coords();
    let mut centers: Vec<Point> = rand::seq::index::sample(rng, n, m)
        .iter()
        .map(|k| coords[k])
        .collect();
    let mut assign = vec![usize::MAX; n];

    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (k, p) in coords.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = p.distance_sq(*center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if assign[k] != best.1 {
                assign[k] = best.1;
                changed = true;
            }
        }
        repair_empty_clusters(coords, &mut assign, &mut centers);
        let updated = cluster_means(coords, &assign, m);
        let moved = updated != centers;
        centers = updated;
        if !changed && !moved {
            break;
        }
    }

    let mut blocks = vec![Vec::new(); m];
    for (k, &c) in assign.iter().enumerate() {
        blocks[c].push(k);
    }
    BlockPartition::from_blocks(sites, blocks)
}

fn cluster_means(coords: &[Point], assign: &[usize], m: usize) -> Vec<Point> {
    let mut sum = vec![(0.0, 0.0, 0usize); m];
    for (p, &c) in coords.iter().zip(assign) {
        sum[c].0 += p.x;
        sum[c].1 += p.y;
        sum[c].2 += 1;
    }
    sum.into_iter()
        .map(|(sx, sy, k)| Point::new(sx / k as f64, sy / k as f64))
        .collect()
}

/// Moves the farthest member of the largest cluster into each empty cluster.
fn repair_empty_clusters(coords: &[Point], assign: &mut [usize], centers: &mut [Point]) {
    let m = centers.len();
    loop {
        let mut sizes = vec![0usize; m];
        for &c in assign.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..m).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        let mean = cluster_means(coords, assign, m)[largest];
        let far = (0..coords.len())
            .filter(|&k| assign[k] == largest)
            .max_by(|&a, &b| {
                coords[a]
                    .distance_sq(mean)
                    .total_cmp(&coords[b].distance_sq(mean))
                    .then(b.cmp(&a))
            })
            .unwrap();
        assign[far] = empty;
        centers[empty] = coords[far];
    }
}

fn weight(active: bool) -> f64 {
    if active {
        1.0
    } else {
        0.0
    }
}

/// 1 when the `a` sites of blocks `i` and `j` are closer than `d_s`, else 0.
pub fn pair_weight(
    cfg: &PairConfiguration,
    i: usize,
    j: usize,
    sites: &SiteSet,
    d_s: f64,
) -> Result<f64> {
    if i == j || i >= cfg.len() || j >= cfg.len() {
        return Err(Error::Domain(format!("invalid block pair ({i}, {j})")));
    }
    let d = sites.point(cfg.a(i)).distance(sites.point(cfg.a(j)));
    Ok(weight(d < d_s))
}

/// 1 when the centroids of blocks `i` and `j` are closer than `threshold`, else 0.
pub fn block_weight(part: &BlockPartition, i: usize, j: usize, threshold: f64) -> Result<f64> {
    if i == j || i >= part.len() || j >= part.len() {
        return Err(Error::Domain(format!("invalid block pair ({i}, {j})")));
    }
    Ok(weight(part.centroids[i].distance(part.centroids[j]) < threshold))
}
