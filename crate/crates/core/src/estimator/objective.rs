//! Conditional −2·log-posterior of one patient's random effects.
//!
//! ```text
//! O(η) = Σ_j [ (y_j − f_j(η))² / var_j + ln var_j ] + ηᵀ Ω⁻¹ η + ln det Ω
//! ```
//!
//! with `var_j = σ_prop² f_j² + σ_add²`. Constants `(m + q)·ln 2π` are omitted here.

use nalgebra::{DMatrix, DVector};

use super::model::{residual_variance, Omega, PopulationModel, ResidualError};
use crate::error::{Error, Result};
use crate::pk::{EtaTarget, EventTimeline, SimulationPlan, StructuralTheta};

/// Maps a random-effect vector to predictions at the conditioned observations.
pub trait Predictor {
    fn predict(&self, eta: &[f64]) -> Result<Vec<f64>>;
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn predict(&self, eta: &[f64]) -> Result<Vec<f64>> {
        self(eta)
    }
}

/// Predictions from the PK simulator at a subset of observation events.
pub struct PkPredictor<'a> {
    pub plan: &'a SimulationPlan,
    pub theta: &'a StructuralTheta,
    pub eta_map: &'a [EtaTarget],
    /// Positions within the plan's observation list.
    pub used: &'a [usize],
}

impl Predictor for PkPredictor<'_> {
    fn predict(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let all = self.plan.run(self.theta, self.eta_map, eta)?;
        Ok(self.used.iter().map(|&i| all[i]).collect())
    }
}

/// Posterior objective for one patient.
pub struct PosteriorObjective<P> {
    predictor: P,
    observed: Vec<f64>,
    sigma: ResidualError,
    omega_inv: DMatrix<f64>,
    omega_logdet: f64,
}

impl<P: Predictor> PosteriorObjective<P> {
    pub fn new(predictor: P, observed: Vec<f64>, sigma: ResidualError, omega: &Omega) -> Result<Self> {
        let (omega_inv, omega_logdet) = omega.inverse_and_logdet()?;
        Ok(Self::from_parts(predictor, observed, sigma, omega_inv, omega_logdet))
    }

    pub fn from_parts(
        predictor: P,
        observed: Vec<f64>,
        sigma: ResidualError,
        omega_inv: DMatrix<f64>,
        omega_logdet: f64,
    ) -> Self {
        Self {
            predictor,
            observed,
            sigma,
            omega_inv,
            omega_logdet,
        }
    }

    pub fn dim(&self) -> usize {
        self.omega_inv.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.observed.len()
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    /// `Σ_j (y_j − f_j)²/var_j + ln var_j`; infinite if any variance is not positive.
    pub fn data_term(&self, pred: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (y, f) in self.observed.iter().zip(pred) {
            let var = residual_variance(*f, &self.sigma);
            if !(var > 0.0) {
                return f64::INFINITY;
            }
            acc += (y - f).powi(2) / var + var.ln();
        }
        acc
    }

    /// `ηᵀ Ω⁻¹ η + ln det Ω`.
    pub fn prior_term(&self, eta: &[f64]) -> f64 {
        let e = DVector::from_column_slice(eta);
        (e.transpose() * &self.omega_inv * &e)[(0, 0)] + self.omega_logdet
    }

    pub fn try_value(&self, eta: &[f64]) -> Result<f64> {
        if eta.len() != self.dim() {
            return Err(Error::Config(format!(
                "eta has {} entries, omega is {}x{}",
                eta.len(),
                self.dim(),
                self.dim()
            )));
        }
        let data = if self.observed.is_empty() {
            0.0
        } else {
            let pred = self.predictor.predict(eta)?;
            self.data_term(&pred)
        };
        Ok(data + self.prior_term(eta))
    }

    /// Objective value, `+∞` where it cannot be evaluated.
    pub fn value(&self, eta: &[f64]) -> f64 {
        match self.try_value(eta) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::INFINITY,
        }
    }
}

/// Positions (within the observation-event list) and values of the first `n` observations that
/// enter estimation.
pub fn conditioned_observations(timeline: &EventTimeline, n: usize) -> (Vec<usize>, Vec<f64>) {
    timeline
        .observations()
        .enumerate()
        .filter_map(|(i, e)| e.observed().map(|v| (i, v)))
        .take(n)
        .unzip()
}

/// Evaluates `O(η)` using only the first `n_obs_used` non-missing observations.
pub fn individual_objective(
    eta: &[f64],
    timeline: &EventTimeline,
    model: &PopulationModel,
    n_obs_used: usize,
) -> Result<f64> {
    let available = timeline.n_observed();
    if n_obs_used > available {
        return Err(Error::Domain(format!(
            "n_obs_used = {n_obs_used} exceeds the {available} available observations"
        )));
    }
    let plan = SimulationPlan::new(timeline)?;
    let (used, observed) = conditioned_observations(timeline, n_obs_used);
    let predictor = PkPredictor {
        plan: &plan,
        theta: &model.theta,
        eta_map: model.eta_map(),
        used: &used,
    };
    PosteriorObjective::new(predictor, observed, model.sigma, &model.omega)?.try_value(eta)
}
