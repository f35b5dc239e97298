//! Therapeutic drug monitoring of tacrolimus after liver transplantation.
//!
//! - [`pk`]: one-compartment oral model with sigmoid post-operative-day clearance.
//! - [`estimator`]: Laplace population fits, informative priors with tunable weights, MAP
//!   individual estimation.
//! - [`forecast`]: sequential a priori / Bayesian forecasting and prediction-error metrics.
//! - [`data`]: dataset CSV, covariate imputation, cohort splitting, model-definition JSON.
//! - [`synth`]: seeded synthetic cohorts.

pub mod data;
pub mod error;
pub mod estimator;
pub mod forecast;
pub mod optim;
pub mod pk;
pub mod synth;

pub use error::{Error, Result};
