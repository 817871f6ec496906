//! Adaptive tests for a linear functional `xi' beta` in sparse Gaussian-design regression.
//!
//! The crate is organised by role:
//!
//! * [`model`] holds parameter points, datasets and the covariance parametrisation.
//! * [`profile`] computes the rate functionals of a loading vector.
//! * [`estimators`] and [`inference`] build point estimates, intervals and tests.
//! * [`priors`] and [`low_degree`] provide the lower-bound oracles.
//! * [`scca`] covers sparse CCA detection and its reduction to functional testing.
//! * [`harness`] runs seeded Monte Carlo experiments and writes result tables.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod low_degree;
pub mod model;
pub mod priors;
pub mod profile;
pub mod rng;
pub mod scca;

pub use error::{Error, Result};
