//! Laplace approximation of one patient's marginal likelihood.
//!
//! With `O(η)` the posterior objective (see [`super::objective`]), `η̂` its minimizer and `H` the
//! Hessian of `O/2` at `η̂`, the approximate −2·log marginal likelihood is
//!
//! ```text
//! O(η̂) + ln det(H / 2π) + (m + q)·ln 2π  =  O(η̂) + ln det H + m·ln 2π
//! ```
//!
//! for `m` observations and `q` random effects. This is the full −2LL, so it coincides with the
//! exact Gaussian −2LL on linear-Gaussian problems, and a patient without observations
//! contributes exactly 0.

use std::f64::consts::PI;

use super::map::{default_starts, minimize_posterior};
use super::model::PopulationModel;
use super::objective::{conditioned_observations, PkPredictor, PosteriorObjective, Predictor};
use crate::error::{Error, Result};
use crate::optim::fd::{hessian, repair_positive_definite};
use crate::pk::{EventTimeline, SimulationPlan};

/// Relative finite-difference step for the η Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;
/// Eigenvalue floor used to repair a non positive-definite Hessian.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Laplace −2LL given the mode `eta_hat` and `f_hat = O(eta_hat)`.
pub fn laplace_at<P: Predictor>(obj: &PosteriorObjective<P>, eta_hat: &[f64], f_hat: f64) -> Result<f64> {
    let m = obj.n_obs();
    if m == 0 {
        return Ok(0.0);
    }
    if !f_hat.is_finite() {
        return Err(Error::Domain("objective is not finite at the mode".into()));
    }
    let logdet = if eta_hat.is_empty() {
        0.0
    } else {
        let mut f = |e: &[f64]| 0.5 * obj.value(e);
        let h = hessian(&mut f, eta_hat, 0.5 * f_hat, HESSIAN_STEP);
        let h = repair_positive_definite(&h, EIGEN_FLOOR)
            .ok_or_else(|| Error::Domain("Hessian at the mode is not finite".into()))?;
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::Domain("repaired Hessian is not positive definite".into()))?;
        2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    Ok(f_hat + logdet + m as f64 * (2.0 * PI).ln())
}

/// Laplace −2LL contribution of `timeline` under `model`, using every non-missing observation.
pub fn laplace_marginal(timeline: &EventTimeline, model: &PopulationModel) -> Result<f64> {
    let n = timeline.n_observed();
    if n == 0 {
        return Ok(0.0);
    }
    let plan = SimulationPlan::new(timeline)?;
    let (used, observed) = conditioned_observations(timeline, n);
    let predictor = PkPredictor {
        plan: &plan,
        theta: &model.theta,
        eta_map: model.eta_map(),
        used: &used,
    };
    let obj = PosteriorObjective::new(predictor, observed, model.sigma, &model.omega)?;
    let mode = minimize_posterior(&obj, &default_starts(model.n_eta()));
    laplace_at(&obj, &mode.x, mode.f)
}
