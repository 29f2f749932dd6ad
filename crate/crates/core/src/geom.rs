//! Site sets, distances, synthetic site generation and lon/lat projection.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Euclidean distance without input checks.
    #[inline]
    pub fn distance(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    #[inline]
    pub fn distance_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Checked Euclidean distance `‖p − q‖₂`.
pub fn euclidean_distance(p: Point, q: Point) -> Result<f64> {
    if !p.is_finite() || !q.is_finite() {
        return Err(Error::Domain("non-finite coordinate".into()));
    }
    Ok(p.distance(q))
}

/// Observation locations with an optional aligned data vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    coords: Vec<Point>,
    data: Option<Vec<f64>>,
}

impl SiteSet {
    pub fn new(coords: Vec<Point>) -> Result<Self> {
        if let Some(k) = coords.iter().position(|p| !p.is_finite()) {
            return Err(Error::Data(format!("site {k} has a non-finite coordinate")));
        }
        Ok(SiteSet { coords, data: None })
    }

    pub fn with_data(coords: Vec<Point>, data: Vec<f64>) -> Result<Self> {
        SiteSet::new(coords)?.attach(data)
    }

    /// Replaces the data vector, keeping the coordinates.
    pub fn attach(mut self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.coords.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coords.len(),
                got: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|z| !z.is_finite()) {
            return Err(Error::Data(format!("observation {k} is not finite")));
        }
        self.data = Some(data);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn point(&self, k: usize) -> Point {
        self.coords[k]
    }

    /// The data vector, or a data error when none is attached.
    pub fn data(&self) -> Result<&[f64]> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Data("site set has no data attached".into()))
    }

    pub fn has_data(&self) -> bool {
        self.data.is_some()
    }

    /// Restriction to the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> SiteSet {
        SiteSet {
            coords: indices.iter().map(|&k| self.coords[k]).collect(),
            data: self
                .data
                .as_ref()
                .map(|z| indices.iter().map(|&k| z[k]).collect()),
        }
    }

    /// Fails when two sites share exactly the same coordinates.
    pub fn check_distinct(&self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.coords.len()).collect();
        order.sort_by(|&a, &b| {
            let (p, q) = (self.coords[a], self.coords[b]);
            p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y))
        });
        for w in order.windows(2) {
            if self.coords[w[0]] == self.coords[w[1]] {
                return Err(Error::Data(format!(
                    "sites {} and {} coincide",
                    w[0].min(w[1]),
                    w[0].max(w[1])
                )));
            }
        }
        Ok(())
    }

    /// Subtracts the sample mean from the data and returns it.
    pub fn center(&mut self) -> Result<f64> {
        let z = self
            .data
            .as_mut()
            .ok_or_else(|| Error::Data("site set has no data attached".into()))?;
        if z.is_empty() {
            return Ok(0.0);
        }
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        z.iter_mut().for_each(|v| *v -= mean);
        Ok(mean)
    }

    /// Axis-aligned bounding box as `(min, max)` corners.
    pub fn bounding_box(&self) -> Option<(Point, Point)> {
        let first = *self.coords.first()?;
        Some(self.coords.iter().fold((first, first), |(lo, hi), p| {
            (
                Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        }))
    }

    /// Diagonal of the bounding box, an upper bound on every pairwise distance.
    pub fn extent_diagonal(&self) -> f64 {
        self.bounding_box().map_or(0.0, |(lo, hi)| lo.distance(hi))
    }

    /// Largest pairwise distance (quadratic in `n`).
    pub fn max_pairwise_distance(&self) -> f64 {
        let mut best = 0.0f64;
        for (k, p) in self.coords.iter().enumerate() {
            for q in &self.coords[k + 1..] {
                best = best.max(p.distance_sq(*q));
            }
        }
        best.sqrt()
    }

    /// Smallest distance between distinct indices (quadratic in `n`).
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (k, p) in self.coords.iter().enumerate() {
            for q in &self.coords[k + 1..] {
                best = best.min(p.distance_sq(*q));
            }
        }
        best.sqrt()
    }
}

/// Regular grid over `[0, extent]²` whose nodes are jittered uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbedGrid {
    pub spacing: f64,
    pub jitter_halfwidth: f64,
    pub extent: f64,
}

impl Default for PerturbedGrid {
    fn default() -> Self {
        PerturbedGrid {
            spacing: 0.03,
            jitter_halfwidth: 0.01,
            extent: 1.0,
        }
    }
}

impl PerturbedGrid {
    /// Grid nodes `0, s, 2s, …` not exceeding the extent, per axis.
    pub fn nodes_per_axis(&self) -> usize {
        (self.extent / self.spacing + 1e-9).floor() as usize + 1
    }

    pub fn grid_size(&self) -> usize {
        let k = self.nodes_per_axis();
        k * k
    }

    /// Jitters every grid node, then samples `n_select` of them without replacement.
    pub fn generate<R: Rng + ?Sized>(&self, n_select: usize, rng: &mut R) -> Result<SiteSet> {
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::Domain(format!("spacing must be > 0, got {}", self.spacing)));
        }
        if !(self.jitter_halfwidth.is_finite() && self.jitter_halfwidth >= 0.0) {
            return Err(Error::Domain("jitter half-width must be >= 0".into()));
        }
        let k = self.nodes_per_axis();
        if n_select > k * k {
            return Err(Error::Domain(format!(
                "cannot select {n_select} sites from a grid of {}",
                k * k
            )));
        }
        let w = self.jitter_halfwidth;
        let mut grid = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                let mut p = Point::new(i as f64 * self.spacing, j as f64 * self.spacing);
                if w > 0.0 {
                    p.x += rng.random_range(-w..=w);
                    p.y += rng.random_range(-w..=w);
                }
                grid.push(p);
            }
        }
        let picked = rand::seq::index::sample(rng, grid.len(), n_select);
        SiteSet::new(picked.iter().map(|k| grid[k]).collect())
    }
}

/// Jittered-grid sites with the given spacing and jitter over the unit square.
pub fn generate_perturbed_grid<R: Rng + ?Sized>(
    spacing: f64,
    jitter_halfwidth: f64,
    n_select: usize,
    rng: &mut R,
) -> Result<SiteSet> {
    PerturbedGrid {
        spacing,
        jitter_halfwidth,
        extent: 1.0,
    }
    .generate(n_select, rng)
}

/// Sinusoidal projection centred on the prime meridian, in the units of `earth_radius`.
pub fn sinusoidal_project(lon: f64, lat: f64, earth_radius: f64) -> Result<Point> {
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Domain(format!("longitude {lon} outside [-180, 180]")));
    }
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::Domain(format!("latitude {lat} outside [-90, 90]")));
    }
    if !(earth_radius.is_finite() && earth_radius > 0.0) {
        return Err(Error::Domain("earth radius must be > 0".into()));
    }
    let rad = std::f64::consts::PI / 180.0;
    Ok(Point::new(
        earth_radius * rad * lon * (lat * rad).cos(),
        earth_radius * rad * lat,
    ))
}

/// Reads `x,y,z` (planar) or `lon,lat,z` (projected on read) CSV data.
pub fn read_sites_csv<R: Read>(reader: R, earth_radius: f64) -> Result<SiteSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_ascii_lowercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (first, second, geographic) = match (col("x"), col("y"), col("lon"), col("lat")) {
        (Some(x), Some(y), _, _) => (x, y, false),
        (_, _, Some(lon), Some(lat)) => (lon, lat, true),
        _ => {
            return Err(Error::Data(
                "CSV header must contain x,y,z or lon,lat,z".into(),
            ))
        }
    };
    let zcol = col("z").ok_or_else(|| Error::Data("CSV header lacks a `z` column".into()))?;

    let mut coords = Vec::new();
    let mut data = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |k: usize| -> Result<f64> {
            record
                .get(k)
                .ok_or_else(|| Error::Data(format!("row {}: missing column", row + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("row {}: {e}", row + 1)))
        };
        let (u, v, z) = (field(first)?, field(second)?, field(zcol)?);
        let p = if geographic {
            sinusoidal_project(u, v, earth_radius)
                .map_err(|e| Error::Data(format!("row {}: {e}", row + 1)))?
        } else {
            Point::new(u, v)
        };
        coords.push(p);
        data.push(z);
    }
    SiteSet::with_data(coords, data)
}

pub fn read_sites_file(path: &Path, earth_radius: f64) -> Result<SiteSet> {
    let file = std::fs::File::open(path)?;
    read_sites_csv(std::io::BufReader::new(file), earth_radius)
}

/// Writes `x,y,z` rows; sites without data get an empty `z` column.
pub fn write_sites_csv<W: Write>(sites: &SiteSet, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["x", "y", "z"])?;
    for (k, p) in sites.coords().iter().enumerate() {
        let z = sites
            .data
            .as_ref()
            .map(|d| d[k].to_string())
            .unwrap_or_default();
        wtr.write_record([p.x.to_string(), p.y.to_string(), z])?;
    }
    wtr.flush()?;
    Ok(())
}
