//! Predictions at arbitrary times and linear dose adjustment toward the target midpoint.

use serde::{Deserialize, Serialize};

use super::exposure::TargetRange;
use crate::error::{Error, Result};
use crate::estimator::{IndividualEstimate, PopulationModel};
use crate::pk::{simulate, Event, EventTimeline, ProfilePoint};

/// Dose granularity of the recommendation, mg.
pub const DOSE_STEP_MG: f64 = 0.5;

/// Predicted concentrations at `times` (hours), in the order given.
///
/// Times without an observation event get a masked one; covariates are carried forward past
/// the last recorded POD.
pub fn predict_at_times(
    timeline: &EventTimeline,
    model: &PopulationModel,
    eta: &[f64],
    times: &[f64],
) -> Result<Vec<ProfilePoint>> {
    let mut tl = timeline.clone();
    let existing: Vec<f64> = tl.observations().map(Event::time).collect();
    let mut extra: Vec<f64> = times.iter().copied().filter(|t| !existing.contains(t)).collect();
    extra.sort_by(f64::total_cmp);
    extra.dedup();
    tl.add_events(extra.iter().map(|&time| Event::Observation {
        time,
        value: None,
        mdv: true,
    }))?;
    if let Some((_, last)) = tl.pod_span() {
        tl.extend_covariates_through(last);
    }
    let profile = simulate(&tl, &model.theta, model.eta_map(), eta)?;
    times
        .iter()
        .map(|t| {
            profile
                .points
                .iter()
                .find(|p| p.time == *t)
                .copied()
                .ok_or_else(|| Error::Domain(format!("no prediction produced at t={t}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseRecommendation {
    /// Recommended amount per administration, mg.
    pub dose_mg: f64,
    pub current_dose_mg: f64,
    pub predicted_trough: f64,
    pub target_midpoint: f64,
    pub trough_time: f64,
    pub trough_pod: u32,
}

/// Rounds to the nearest 0.5 mg, never below 0.5 mg.
pub fn round_dose(mg: f64) -> f64 {
    ((mg / DOSE_STEP_MG).round() * DOSE_STEP_MG).max(DOSE_STEP_MG)
}

/// Scales the current dose so the predicted trough at `next_trough_time` reaches the midpoint
/// of the band active on that POD.
///
/// The current dose is the last dose given before `next_trough_time`.
pub fn recommend_dose(
    timeline: &EventTimeline,
    model: &PopulationModel,
    estimate: &IndividualEstimate,
    target: &TargetRange,
    next_trough_time: f64,
) -> Result<DoseRecommendation> {
    target.validate()?;
    let current = timeline
        .doses()
        .filter(|(t, _)| *t < next_trough_time)
        .last()
        .map(|(_, amt)| amt)
        .ok_or_else(|| Error::Domain("no dose precedes the trough time".into()))?;
    let point = predict_at_times(timeline, model, &estimate.eta_hat, &[next_trough_time])?[0];
    if !(point.concentration > 0.0) {
        return Err(Error::Domain(format!(
            "predicted trough must be > 0, got {}",
            point.concentration
        )));
    }
    let midpoint = target.band_at(point.pod).midpoint();
    Ok(DoseRecommendation {
        dose_mg: round_dose(current * midpoint / point.concentration),
        current_dose_mg: current,
        predicted_trough: point.concentration,
        target_midpoint: midpoint,
        trough_time: next_trough_time,
        trough_pod: point.pod,
    })
}

/// Hypothetical fixed regimen: `n_doses` doses of `dose_mg` every `interval_h` from `start_time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regimen {
    pub dose_mg: f64,
    pub interval_h: f64,
    pub start_time: f64,
    pub n_doses: u32,
}

impl Regimen {
    pub fn validate(&self) -> Result<()> {
        if !(self.dose_mg > 0.0 && self.dose_mg.is_finite()) {
            return Err(Error::Domain(format!("dose_mg must be > 0, got {}", self.dose_mg)));
        }
        if !(self.interval_h > 0.0 && self.interval_h.is_finite()) {
            return Err(Error::Domain(format!(
                "interval_h must be > 0, got {}",
                self.interval_h
            )));
        }
        if !(self.start_time >= 0.0 && self.start_time.is_finite()) {
            return Err(Error::Domain(format!(
                "start_time must be >= 0, got {}",
                self.start_time
            )));
        }
        if self.n_doses == 0 {
            return Err(Error::Domain("n_doses must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dose_times(&self) -> Vec<f64> {
        (0..self.n_doses)
            .map(|k| self.start_time + f64::from(k) * self.interval_h)
            .collect()
    }

    /// End of each dosing interval; all but the last coincide with the next dose, before it is
    /// absorbed.
    pub fn trough_times(&self) -> Vec<f64> {
        (1..=self.n_doses)
            .map(|k| self.start_time + f64::from(k) * self.interval_h)
            .collect()
    }
}

/// `timeline` with every dose at or after `regimen.start_time` replaced by the regimen.
pub fn apply_regimen(timeline: &EventTimeline, regimen: &Regimen) -> Result<EventTimeline> {
    regimen.validate()?;
    let kept: Vec<Event> = timeline
        .events()
        .iter()
        .filter(|e| !(e.is_dose() && e.time() >= regimen.start_time))
        .cloned()
        .chain(regimen.dose_times().into_iter().map(|time| Event::Dose {
            time,
            amount: regimen.dose_mg,
        }))
        .collect();
    Ok(EventTimeline::new(
        timeline.patient_id.clone(),
        kept,
        timeline.covariates().clone(),
        timeline.pod_offset(),
    )?
    .with_transplant_date(timeline.transplant_date))
}
