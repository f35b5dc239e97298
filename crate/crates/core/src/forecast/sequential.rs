//! Sequential TDM replay: predict each observation from the ones before it.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::PredictionRecord;
use crate::error::{Error, Result};
use crate::estimator::{map_estimate, PopulationModel};
use crate::pk::{EventTimeline, SimulationPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastMode {
    /// After `n` observations, predict only observation `n + 1`.
    #[default]
    NextOne,
    /// After `n` observations, predict every later observation.
    AllRemaining,
}

impl FromStr for ForecastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "next-one" => Ok(Self::NextOne),
            "all-remaining" => Ok(Self::AllRemaining),
            other => Err(Error::Config(format!(
                "unknown forecast mode '{other}' (expected next-one or all-remaining)"
            ))),
        }
    }
}

impl fmt::Display for ForecastMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NextOne => "next-one",
            Self::AllRemaining => "all-remaining",
        })
    }
}

/// A conditioning step whose estimate could not be used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedStep {
    pub patient_id: String,
    pub n_obs: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastOutcome {
    pub records: Vec<PredictionRecord>,
    pub flagged: Vec<FlaggedStep>,
}

impl ForecastOutcome {
    pub fn extend(&mut self, other: ForecastOutcome) {
        self.records.extend(other.records);
        self.flagged.extend(other.flagged);
    }
}

/// Predictions for the estimation observations of `timeline` given `eta`.
///
/// Element `i` is the prediction of the `i`-th non-missing observation.
pub fn predict_observed(timeline: &EventTimeline, model: &PopulationModel, eta: &[f64]) -> Result<Vec<f64>> {
    let plan = SimulationPlan::new(timeline)?;
    let all = plan.run(&model.theta, model.eta_map(), eta)?;
    Ok(timeline
        .observations()
        .zip(all)
        .filter_map(|(ev, c)| ev.observed().map(|_| c))
        .collect())
}

/// Replays `timeline` observation by observation.
///
/// Step `n = 0` is the a priori prediction (η = 0) of every observation. Steps where the MAP
/// estimate fails or does not converge are reported in `flagged` and emit no records.
pub fn sequential_forecast(
    timeline: &EventTimeline,
    model: &PopulationModel,
    mode: ForecastMode,
) -> Result<ForecastOutcome> {
    let observed: Vec<f64> = timeline.observed().into_iter().map(|(_, v)| v).collect();
    let n_total = observed.len();
    if n_total == 0 {
        return Err(Error::data(&timeline.patient_id, "no observations to forecast"));
    }
    SimulationPlan::new(timeline)?;
    let mut out = ForecastOutcome::default();
    for n in 0..n_total {
        let step = map_estimate(timeline, model, n).and_then(|est| {
            if !est.converged {
                return Err(Error::Domain("MAP estimate did not converge".into()));
            }
            predict_observed(timeline, model, &est.eta_hat)
        });
        let preds = match step {
            Ok(p) => p,
            Err(e) => {
                log::warn!("patient {}: forecast step n_obs={n} flagged: {e}", timeline.patient_id);
                out.flagged.push(FlaggedStep {
                    patient_id: timeline.patient_id.clone(),
                    n_obs: n,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let targets = if n == 0 || mode == ForecastMode::AllRemaining {
            n..n_total
        } else {
            n..n + 1
        };
        for i in targets {
            out.records.push(PredictionRecord::new(
                timeline.patient_id.clone(),
                i + 1,
                n,
                preds[i],
                observed[i],
            )?);
        }
    }
    Ok(out)
}

/// Replays every patient in parallel; outcomes are concatenated in cohort order.
pub fn forecast_cohort(cohort: &[EventTimeline], model: &PopulationModel, mode: ForecastMode) -> ForecastOutcome {
    let parts: Vec<ForecastOutcome> = cohort
        .par_iter()
        .map(|tl| {
            if tl.n_observed() == 0 {
                return ForecastOutcome::default();
            }
            sequential_forecast(tl, model, mode).unwrap_or_else(|e| {
                log::warn!("patient {}: forecast failed: {e}", tl.patient_id);
                ForecastOutcome {
                    records: Vec::new(),
                    flagged: vec![FlaggedStep {
                        patient_id: tl.patient_id.clone(),
                        n_obs: 0,
                        reason: e.to_string(),
                    }],
                }
            })
        })
        .collect();
    let mut out = ForecastOutcome::default();
    for p in parts {
        out.extend(p);
    }
    out
}
