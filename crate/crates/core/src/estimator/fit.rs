//! Population estimation: minimizes `Σ_i Laplace_i + prior penalty`.
//!
//! Free parameters are mapped to an unconstrained vector: positive structural parameters and
//! residual SDs on the log scale, covariate coefficients as-is, and Ω through its lower Cholesky
//! factor with log-transformed diagonal (log-Cholesky). The outer optimizer is Nelder-Mead.
//! Patients are processed in `patient_id` order so the result does not depend on input order.

use std::sync::Mutex;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laplace::laplace_at;
use super::map::{default_starts, minimize_posterior};
use super::model::{OmegaStructure, PopulationModel};
use super::objective::{conditioned_observations, PkPredictor, PosteriorObjective};
use super::prior::{prior_penalty_terms, Penalty, PriorSpec};
use crate::error::{Error, Result};
use crate::optim::fd::{hessian, sorted_eigenvalues};
use crate::optim::{NelderMead, Newton};
use crate::pk::{EventTimeline, SimulationPlan, ThetaParam};

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Outer optimizer; defaults to relative objective tolerance 1e-6 and 2000 evaluations.
    pub optimizer: NelderMead,
    /// Compute the outer Hessian (condition report and RSE proxies) at the optimum.
    pub covariance: bool,
    /// Relative finite-difference step for the outer Hessian, on the transformed scale.
    pub hessian_step: f64,
    pub parallel: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optimizer: NelderMead::default(),
            covariance: true,
            hessian_step: 1e-3,
            parallel: true,
        }
    }
}

/// Objective at the optimum; `total == data + penalty.total()`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub data: f64,
    pub penalty: Penalty,
    pub total: f64,
}

/// Eigenvalues of the outer-objective Hessian on the transformed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub eigenvalues: Vec<f64>,
    /// `max / min` eigenvalue; `None` unless the Hessian is positive definite.
    pub spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    /// Relative standard-error proxy from the outer Hessian.
    pub rse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: PopulationModel,
    pub objective: ObjectiveTerms,
    pub converged: bool,
    pub n_function_evals: usize,
    pub condition_report: Option<ConditionReport>,
    pub estimates: Vec<ParameterEstimate>,
    pub excluded_patients: Vec<String>,
    pub warnings: Vec<String>,
    /// All observations identical: the data carry no information on variability.
    pub degenerate: bool,
}

impl FitResult {
    pub fn minus2ll(&self) -> f64 {
        self.objective.total
    }

    pub fn max_rse(&self) -> Option<f64> {
        self.estimates
            .iter()
            .map(|e| e.rse)
            .try_fold(0.0f64, |acc, r| r.map(|v| acc.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Theta(ThetaParam),
    OmegaChol(usize, usize),
    SigmaProp,
    SigmaAdd,
}

/// Free-parameter layout relative to a template model.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    slots: Vec<Slot>,
    template: PopulationModel,
}

impl Layout {
    pub(crate) fn new(model: &PopulationModel) -> Self {
        let mut slots: Vec<Slot> = model
            .theta
            .params()
            .into_iter()
            .filter(|p| model.is_estimated(*p))
            .map(Slot::Theta)
            .collect();
        let q = model.n_eta();
        for i in 0..q {
            for j in 0..=i {
                if i == j || model.omega.structure() == OmegaStructure::Full {
                    slots.push(Slot::OmegaChol(i, j));
                }
            }
        }
        if model.sigma.prop > 0.0 {
            slots.push(Slot::SigmaProp);
        }
        if model.sigma.add > 0.0 {
            slots.push(Slot::SigmaAdd);
        }
        Self {
            slots,
            template: model.clone(),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.slots.len()
    }

    pub(crate) fn pack(&self, model: &PopulationModel) -> Result<Vec<f64>> {
        let l = model.omega.cholesky()?;
        Ok(self
            .slots
            .iter()
            .map(|s| match *s {
                Slot::Theta(p) if p.is_positive() => p.get(&model.theta).ln(),
                Slot::Theta(p) => p.get(&model.theta),
                Slot::OmegaChol(i, j) if i == j => l[(i, i)].ln(),
                Slot::OmegaChol(i, j) => l[(i, j)],
                Slot::SigmaProp => model.sigma.prop.ln(),
                Slot::SigmaAdd => model.sigma.add.ln(),
            })
            .collect())
    }

    pub(crate) fn unpack(&self, x: &[f64]) -> Result<PopulationModel> {
        let mut m = self.template.clone();
        let q = m.n_eta();
        let mut l = m.omega.cholesky()?;
        let mut sigma = m.sigma;
        for (s, v) in self.slots.iter().zip(x) {
            match *s {
                Slot::Theta(p) if p.is_positive() => p.set(&mut m.theta, v.exp()),
                Slot::Theta(p) => p.set(&mut m.theta, *v),
                Slot::OmegaChol(i, j) if i == j => l[(i, i)] = v.exp(),
                Slot::OmegaChol(i, j) => l[(i, j)] = *v,
                Slot::SigmaProp => sigma.prop = v.exp(),
                Slot::SigmaAdd => sigma.add = v.exp(),
            }
        }
        let mut omega = &l * l.transpose();
        if m.omega.structure() == OmegaStructure::Diagonal {
            omega = DMatrix::from_fn(q, q, |i, j| if i == j { omega[(i, i)] } else { 0.0 });
        } else {
            omega = (&omega + omega.transpose()) * 0.5;
        }
        m.omega = m.omega.with_matrix(omega)?;
        m.sigma = sigma;
        m.validate()?;
        Ok(m)
    }

    fn slot_name(&self, s: Slot) -> String {
        let etas = self.template.eta_map();
        match s {
            Slot::Theta(p) => p.name(&self.template.theta),
            Slot::OmegaChol(i, j) if i == j => format!("omega2_{}", etas[i].name()),
            Slot::OmegaChol(i, j) => format!("chol_{}_{}", etas[i].name(), etas[j].name()),
            Slot::SigmaProp => "sigma_prop".into(),
            Slot::SigmaAdd => "sigma_add".into(),
        }
    }

    fn initial_steps(&self, x: &[f64]) -> Vec<f64> {
        self.slots
            .iter()
            .zip(x)
            .map(|(s, v)| match *s {
                Slot::Theta(p) if !p.is_positive() => 0.1 * v.abs().max(0.1),
                Slot::OmegaChol(i, j) if i != j => 0.05,
                _ => 0.1,
            })
            .collect()
    }

    /// Parameter values on the natural scale with RSE proxies from `cov` (transformed scale).
    fn estimates(&self, model: &PopulationModel, cov: Option<&DMatrix<f64>>) -> Vec<ParameterEstimate> {
        let mut out = Vec::new();
        for (k, s) in self.slots.iter().enumerate() {
            let sd = cov.and_then(|c| {
                let v = c[(k, k)];
                (v >= 0.0 && v.is_finite()).then(|| v.sqrt())
            });
            let (value, rse) = match *s {
                Slot::Theta(p) if p.is_positive() => (p.get(&model.theta), sd),
                Slot::Theta(p) => {
                    let c = p.get(&model.theta);
                    (c, sd.map(|s| if c == 0.0 { f64::INFINITY } else { s / c.abs() }))
                }
                // ω² ≈ exp(2u) for the diagonal log-Cholesky entry.
                Slot::OmegaChol(i, j) if i == j => (model.omega.matrix()[(i, i)], sd.map(|s| 2.0 * s)),
                Slot::OmegaChol(..) => continue,
                Slot::SigmaProp => (model.sigma.prop, sd),
                Slot::SigmaAdd => (model.sigma.add, sd),
            };
            out.push(ParameterEstimate {
                name: self.slot_name(*s),
                value,
                rse,
            });
        }
        out
    }
}

struct PatientData {
    id: String,
    plan: SimulationPlan,
    used: Vec<usize>,
    observed: Vec<f64>,
}

/// Sum of per-patient Laplace contributions with warm-started inner estimation.
pub(crate) struct CohortObjective {
    patients: Vec<PatientData>,
    warm: Vec<Mutex<Vec<f64>>>,
    parallel: bool,
}

impl CohortObjective {
    fn new(cohort: &[EventTimeline], n_eta: usize, parallel: bool) -> Result<Self> {
        let mut sorted: Vec<&EventTimeline> = cohort.iter().collect();
        sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        let mut patients = Vec::new();
        for tl in sorted {
            let n = tl.n_observed();
            if n == 0 {
                continue;
            }
            let (used, observed) = conditioned_observations(tl, n);
            patients.push(PatientData {
                id: tl.patient_id.clone(),
                plan: SimulationPlan::new(tl)?,
                used,
                observed,
            });
        }
        let warm = patients.iter().map(|_| Mutex::new(vec![0.0; n_eta])).collect();
        Ok(Self {
            patients,
            warm,
            parallel,
        })
    }

    fn patient_term(&self, k: usize, model: &PopulationModel, omega_inv: &DMatrix<f64>, logdet: f64) -> Result<f64> {
        let p = &self.patients[k];
        let predictor = PkPredictor {
            plan: &p.plan,
            theta: &model.theta,
            eta_map: model.eta_map(),
            used: &p.used,
        };
        let obj = PosteriorObjective::from_parts(predictor, p.observed.clone(), model.sigma, omega_inv.clone(), logdet);
        let start = self.warm[k].lock().expect("warm-start lock").clone();
        let mut mode = Newton::default().minimize(|e| obj.value(e), &start);
        if !mode.converged {
            let fallback = minimize_posterior(&obj, &default_starts(model.n_eta()));
            if fallback.f < mode.f || !mode.f.is_finite() {
                mode = fallback;
            }
        }
        if !mode.f.is_finite() {
            return Err(Error::data(&p.id, "posterior objective not finite"));
        }
        let v = laplace_at(&obj, &mode.x, mode.f)?;
        *self.warm[k].lock().expect("warm-start lock") = mode.x;
        Ok(v)
    }

    /// Data term, failing if any patient cannot be evaluated.
    fn data_term(&self, model: &PopulationModel) -> Result<f64> {
        let (inv, logdet) = model.omega.inverse_and_logdet()?;
        let terms: Vec<Result<f64>> = if self.parallel {
            (0..self.patients.len())
                .into_par_iter()
                .map(|k| self.patient_term(k, model, &inv, logdet))
                .collect()
        } else {
            (0..self.patients.len())
                .map(|k| self.patient_term(k, model, &inv, logdet))
                .collect()
        };
        let mut acc = 0.0;
        for t in terms {
            acc += t?;
        }
        Ok(acc)
    }

    fn exclude_failing(&mut self, model: &PopulationModel) -> Result<Vec<String>> {
        let (inv, logdet) = model.omega.inverse_and_logdet()?;
        let failing: Vec<usize> = (0..self.patients.len())
            .filter(|&k| self.patient_term(k, model, &inv, logdet).is_err())
            .collect();
        let ids = failing.iter().map(|&k| self.patients[k].id.clone()).collect();
        for &k in failing.iter().rev() {
            self.patients.remove(k);
            self.warm.remove(k);
        }
        Ok(ids)
    }
}

fn evaluate(problem: &CohortObjective, prior: Option<&PriorSpec>, model: &PopulationModel) -> Result<(f64, Penalty)> {
    let data = problem.data_term(model)?;
    let penalty = match prior {
        Some(p) => prior_penalty_terms(model, p)?,
        None => Penalty::default(),
    };
    Ok((data, penalty))
}

/// Fits the population model to `cohort`, optionally under an informative prior.
pub fn fit_population(
    cohort: &[EventTimeline],
    init: &PopulationModel,
    prior: Option<&PriorSpec>,
    options: &FitOptions,
) -> Result<FitResult> {
    init.validate()?;
    if let Some(p) = prior {
        p.validate()?;
    }
    let mut problem = CohortObjective::new(cohort, init.n_eta(), options.parallel)?;
    if problem.patients.len() < 2 {
        return Err(Error::Domain(
            "population fit needs at least 2 patients with observations".into(),
        ));
    }
    let mut warnings = Vec::new();
    let excluded = problem.exclude_failing(init)?;
    for id in &excluded {
        let msg = format!("patient {id} excluded: marginal likelihood not computable at the initial estimates");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if problem.patients.len() < 2 {
        return Err(Error::Domain("fewer than 2 evaluable patients remain".into()));
    }

    let all_obs: Vec<f64> = problem
        .patients
        .iter()
        .flat_map(|p| p.observed.iter().copied())
        .collect();
    let degenerate = all_obs.windows(2).all(|w| w[0] == w[1]);
    if degenerate {
        let msg = "degenerate cohort: every observation has the same value".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let layout = Layout::new(init);
    let x0 = layout.pack(init)?;
    let steps = layout.initial_steps(&x0);
    let objective = |x: &[f64]| -> f64 {
        let Ok(model) = layout.unpack(x) else {
            return f64::INFINITY;
        };
        match evaluate(&problem, prior, &model) {
            Ok((d, p)) => d + p.total(),
            Err(_) => f64::INFINITY,
        }
    };
    let min = options.optimizer.minimize(objective, &x0, &steps);
    let mut evals = min.evals;

    let model = layout.unpack(&min.x)?;
    let (data, penalty) = evaluate(&problem, prior, &model)?;
    evals += 1;
    let terms = ObjectiveTerms {
        data,
        penalty,
        total: data + penalty.total(),
    };

    let (condition_report, cov) = if options.covariance && layout.len() > 0 {
        let mut f = |x: &[f64]| -> f64 {
            evals += 1;
            layout
                .unpack(x)
                .and_then(|m| evaluate(&problem, prior, &m))
                .map_or(f64::INFINITY, |(d, p)| d + p.total())
        };
        let h = hessian(&mut f, &min.x, terms.total, options.hessian_step);
        let eigenvalues = sorted_eigenvalues(&h);
        let finite = h.iter().all(|v| v.is_finite());
        let spread = match (eigenvalues.first(), eigenvalues.last()) {
            (Some(&lo), Some(&hi)) if finite && lo > 0.0 => Some(hi / lo),
            _ => None,
        };
        let cov = if spread.is_some() {
            h.clone().try_inverse().map(|inv| inv * 2.0)
        } else {
            None
        };
        (Some(ConditionReport { eigenvalues, spread }), cov)
    } else {
        (None, None)
    };

    let estimates = layout.estimates(&model, cov.as_ref());
    let converged = min.converged && terms.total.is_finite();
    if !converged {
        warnings.push(format!(
            "outer optimizer stopped without converging after {} evaluations",
            min.evals
        ));
    }
    Ok(FitResult {
        model,
        objective: terms,
        converged,
        n_function_evals: evals,
        condition_report,
        estimates,
        excluded_patients: excluded,
        warnings,
        degenerate,
    })
}

/// `Σ_i laplace_marginal + penalty` at fixed parameters (no optimization).
pub fn population_objective(
    cohort: &[EventTimeline],
    model: &PopulationModel,
    prior: Option<&PriorSpec>,
) -> Result<ObjectiveTerms> {
    let problem = CohortObjective::new(cohort, model.n_eta(), true)?;
    let (data, penalty) = evaluate(&problem, prior, model)?;
    Ok(ObjectiveTerms {
        data,
        penalty,
        total: data + penalty.total(),
    })
}
