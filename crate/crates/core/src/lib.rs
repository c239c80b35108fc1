//! Lévy random scale mixture (LRSM) models for spatial extremes.
//!
//! The process is X(s) = R^α g(Z(s)) with R ~ Lévy(0, 1/2), Z a unit-variance
//! Matérn Gaussian process and g(z) = 1/(1 − Φ(z)) − 1. The crate covers
//! simulation, four Gaussian likelihood backends, adaptive MCMC, holdout
//! prediction, extremal dependence diagnostics and forecast scoring.

pub mod correlation;
pub mod error;
pub mod extremal;
pub mod fields;
pub mod harness;
pub mod inference;
pub mod likelihood;
pub mod linalg;
pub mod marginal;
pub mod optim;
pub mod prediction;
pub mod quadrature;
pub mod scoring;
pub mod sites;
pub mod special;

pub use error::{Error, Result};
