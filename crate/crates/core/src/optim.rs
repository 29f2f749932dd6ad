//! Nelder–Mead maximization over `θ = (τ², σ², φ)` in log coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamVector;

/// Lower bound applied to the nugget when mapping back from log space.
pub const NUGGET_FLOOR: f64 = 1e-12;

const REFLECTION: f64 = 1.0;
const EXPANSION: f64 = 2.0;
const CONTRACTION: f64 = 0.5;
const SHRINK: f64 = 0.5;
const INITIAL_STEP: f64 = 0.25;
/// Simplex diameter (log coordinates) below which no further progress is possible.
pub const COLLAPSE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Convergence threshold on `max − min` objective value over the simplex.
    /// A simplex that collapses below [`COLLAPSE_TOLERANCE`] also counts as converged.
    pub tolerance: f64,
    pub initial: ParamVector,
}

impl OptimOptions {
    pub fn new(initial: ParamVector) -> Self {
        OptimOptions {
            max_iterations: 10_000,
            tolerance: 1e-16,
            initial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be > 0".into()));
        }
        self.initial.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_hat: ParamVector,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub evaluations: usize,
}

/// Log coordinates of `θ`, with the nugget floored first.
pub fn to_log_coords(theta: &ParamVector) -> [f64; 3] {
    [
        theta.tau2.max(NUGGET_FLOOR).ln(),
        theta.sigma2.ln(),
        theta.range.ln(),
    ]
}

pub fn from_log_coords(x: &[f64; 3]) -> ParamVector {
    ParamVector {
        tau2: x[0].max(NUGGET_FLOOR.ln()).exp(),
        sigma2: x[1].exp(),
        range: x[2].exp(),
    }
}

/// Maximizes `objective`; infeasible or non-finite evaluations count as `−∞`.
pub fn nelder_mead_maximize<F>(objective: F, opts: &OptimOptions) -> Result<EstimateResult>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    nelder_mead_maximize_traced(objective, opts, |_, _| {})
}

/// As [`nelder_mead_maximize`], calling `observe(iteration, best_value)` after every step.
pub fn nelder_mead_maximize_traced<F, O>(
    mut objective: F,
    opts: &OptimOptions,
    mut observe: O,
) -> Result<EstimateResult>
where
    F: FnMut(&ParamVector) -> Result<f64>,
    O: FnMut(usize, f64),
{
    opts.validate()?;
    let mut evaluations = 0usize;
    // minimize the negated objective
    let mut cost = |x: &[f64; 3]| -> Result<f64> {
        evaluations += 1;
        match objective(&from_log_coords(x)) {
            Ok(v) if v.is_finite() => Ok(-v),
            Ok(_) => Ok(f64::INFINITY),
            Err(e) if e.is_infeasible() => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };

    let x0 = to_log_coords(&opts.initial);
    let f0 = cost(&x0)?;
    if f0 == f64::INFINITY {
        return Err(Error::InfeasibleStart);
    }
    let mut simplex: Vec<([f64; 3], f64)> = vec![(x0, f0)];
    for k in 0..3 {
        let mut x = x0;
        x[k] += INITIAL_STEP;
        let f = cost(&x)?;
        simplex.push((x, f));
    }

    let mut iterations = 0;
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[3].1);
        if worst - best <= opts.tolerance || simplex_diameter(&simplex) <= COLLAPSE_TOLERANCE {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        let mut centroid = [0.0; 3];
        for (x, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += x[k] / 3.0;
            }
        }
        let along = |t: f64, from: &[f64; 3]| -> [f64; 3] {
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = centroid[k] + t * (centroid[k] - from[k]);
            }
            p
        };
        let xw = simplex[3].0;
        let second_worst = simplex[2].1;

        let xr = along(REFLECTION, &xw);
        let fr = cost(&xr)?;
        if fr < best {
            let xe = along(REFLECTION * EXPANSION, &xw);
            let fe = cost(&xe)?;
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < second_worst {
            simplex[3] = (xr, fr);
        } else {
            let contracted = if fr < worst {
                let xc = along(REFLECTION * CONTRACTION, &xw);
                let fc = cost(&xc)?;
                (fc <= fr).then_some((xc, fc))
            } else {
                let xc = along(-CONTRACTION, &xw);
                let fc = cost(&xc)?;
                (fc < worst).then_some((xc, fc))
            };
            match contracted {
                Some(v) => simplex[3] = v,
                None => {
                    let xb = simplex[0].0;
                    for vertex in simplex.iter_mut().skip(1) {
                        let mut x = vertex.0;
                        for k in 0..3 {
                            x[k] = xb[k] + SHRINK * (x[k] - xb[k]);
                        }
                        *vertex = (x, cost(&x)?);
                    }
                }
            }
        }
        let step_best = simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        observe(iterations, -step_best);
    }

    let (xb, fb) = simplex[0];
    Ok(EstimateResult {
        theta_hat: from_log_coords(&xb),
        objective_value: -fb,
        iterations,
        converged,
        evaluations,
    })
}

fn simplex_diameter(simplex: &[([f64; 3], f64)]) -> f64 {
    let xb = simplex[0].0;
    simplex[1..]
        .iter()
        .flat_map(|(x, _)| (0..3).map(move |k| (x[k] - xb[k]).abs()))
        .fold(0.0, f64::max)
}
