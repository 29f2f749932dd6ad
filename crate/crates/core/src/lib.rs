//! Covariance-parameter estimation for zero-mean isotropic Gaussian random
//! fields across the block-likelihood spectrum: exact maximum likelihood,
//! pairwise and large-block composite likelihoods, and the matrix-free
//! bi-conditional likelihood built from conditioned pairs of two-site blocks.
//!
//! Supporting machinery covers site generation, simulation, Nelder–Mead
//! fitting, Monte Carlo efficiency studies, parametric bootstrap and simple
//! kriging.

pub mod bench;
pub mod cli;
pub mod dense;
pub mod error;
pub mod geom;
pub mod likelihood;
pub mod mc;
pub mod models;
pub mod optim;
pub mod partition;
pub mod predict;

pub use error::{Error, Result};
pub use geom::{Point, SiteSet};
pub use likelihood::{Method, Objective, ObjectiveSpec};
pub use models::{CorrelationFamily, ParamVector};
pub use optim::{EstimateResult, OptimOptions};
