//! Maximum a posteriori estimation of individual random effects.

use serde::{Deserialize, Serialize};

use super::model::PopulationModel;
use super::objective::{conditioned_observations, PkPredictor, PosteriorObjective, Predictor};
use crate::error::{Error, Result};
use crate::optim::{Minimum, NelderMead, Newton};
use crate::pk::SimulationPlan;

/// Offset applied along each axis for the deterministic extra starts.
pub const START_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualEstimate {
    pub patient_id: String,
    pub eta_hat: Vec<f64>,
    /// Number of observations the estimate is conditioned on.
    pub n_obs_used: usize,
    /// Posterior objective (−2·log, constants omitted) at `eta_hat`.
    pub objective: f64,
    /// False when no start converged; `eta_hat` is then the best point found.
    pub converged: bool,
}

/// `η = 0` plus `±START_OFFSET` along each axis.
pub fn default_starts(dim: usize) -> Vec<Vec<f64>> {
    let mut starts = vec![vec![0.0; dim]];
    for i in 0..dim {
        for s in [START_OFFSET, -START_OFFSET] {
            let mut x = vec![0.0; dim];
            x[i] = s;
            starts.push(x);
        }
    }
    starts
}

/// Minimizes the posterior objective from each start and keeps the best result.
///
/// Newton is tried first; a non-converged run is polished with Nelder-Mead.
pub fn minimize_posterior<P: Predictor>(obj: &PosteriorObjective<P>, starts: &[Vec<f64>]) -> Minimum {
    let newton = Newton::default();
    let polish = NelderMead {
        max_evals: 400 * obj.dim().max(1),
        f_rel_tol: 1e-12,
        x_tol: 1e-7,
        max_restarts: 1,
    };
    let mut best: Option<Minimum> = None;
    let mut evals = 0;
    for start in starts {
        let mut m = newton.minimize(|e| obj.value(e), start);
        evals += m.evals;
        if !m.converged && m.f.is_finite() {
            let nm = polish.minimize(|e| obj.value(e), &m.x, &vec![0.05; m.x.len()]);
            evals += nm.evals;
            if nm.f <= m.f {
                m = Minimum { evals: 0, ..nm };
            }
        }
        let better = match &best {
            None => true,
            Some(b) => m.f < b.f || (!b.converged && m.converged && m.f <= b.f),
        };
        if better {
            best = Some(m);
        }
    }
    let mut out = best.unwrap_or(Minimum {
        x: Vec::new(),
        f: f64::INFINITY,
        evals: 0,
        converged: false,
    });
    out.evals = evals;
    out
}

/// MAP estimate conditioned on the first `n_obs_used` non-missing observations.
///
/// With `n_obs_used = 0` this is the a priori case: `η̂ = 0` without optimization.
pub fn map_estimate(
    timeline: &crate::pk::EventTimeline,
    model: &PopulationModel,
    n_obs_used: usize,
) -> Result<IndividualEstimate> {
    let available = timeline.n_observed();
    if n_obs_used > available {
        return Err(Error::Domain(format!(
            "n_obs_used = {n_obs_used} exceeds the {available} available observations"
        )));
    }
    let dim = model.n_eta();
    let (_, logdet) = model.omega.inverse_and_logdet()?;
    if n_obs_used == 0 {
        return Ok(IndividualEstimate {
            patient_id: timeline.patient_id.clone(),
            eta_hat: vec![0.0; dim],
            n_obs_used: 0,
            objective: logdet,
            converged: true,
        });
    }
    let plan = SimulationPlan::new(timeline)?;
    let (used, observed) = conditioned_observations(timeline, n_obs_used);
    let predictor = PkPredictor {
        plan: &plan,
        theta: &model.theta,
        eta_map: model.eta_map(),
        used: &used,
    };
    let obj = PosteriorObjective::new(predictor, observed, model.sigma, &model.omega)?;
    let m = minimize_posterior(&obj, &default_starts(dim));
    if !m.converged {
        log::warn!(
            "MAP estimation for patient {} (n_obs = {n_obs_used}) did not converge; keeping best point",
            timeline.patient_id
        );
    }
    Ok(IndividualEstimate {
        patient_id: timeline.patient_id.clone(),
        eta_hat: m.x,
        n_obs_used,
        objective: m.f,
        converged: m.converged && m.f.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::model::{Omega, ResidualError};
    use crate::pk::EtaTarget;

    #[test]
    fn starts_layout() {
        let s = default_starts(2);
        assert_eq!(s.len(), 5);
        assert_eq!(s[0], vec![0.0, 0.0]);
        assert_eq!(s[3], vec![0.0, 0.5]);
    }

    #[test]
    fn conjugate_posterior_mode() {
        // y = 10 + 2η + ε, ε ~ N(0, 1), η ~ N(0, 0.5): mode = (2·y'/1) / (4 + 2) with y' = y − 10.
        let om = Omega::diagonal(vec![EtaTarget::Cl], &[0.5]).unwrap();
        let f = |e: &[f64]| -> Result<Vec<f64>> { Ok(vec![10.0 + 2.0 * e[0]]) };
        let obj = PosteriorObjective::new(f, vec![13.0], ResidualError { prop: 0.0, add: 1.0 }, &om).unwrap();
        let m = minimize_posterior(&obj, &default_starts(1));
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }
}
