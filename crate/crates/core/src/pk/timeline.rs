//! Per-patient event timelines: doses, trough observations and the daily covariate record.
//!
//! Time is in hours from a reference midnight; the post-operative day of time `t` is
//! `floor(t / 24) + pod_offset`. Midnights (multiples of 24 h) are therefore day boundaries.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::theta::Covariate;
use crate::error::{Error, Result};

/// Resolved covariates for one post-operative day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateState {
    pub pod: u32,
    /// Albumin, g/L.
    pub alb: f64,
    /// Aspartate aminotransferase, UI/L.
    pub asat: f64,
    /// Body weight, kg.
    pub weight: f64,
}

impl CovariateState {
    pub fn value(&self, cov: Covariate) -> f64 {
        match cov {
            Covariate::Pod => f64::from(self.pod),
            Covariate::Alb => self.alb,
            Covariate::Asat => self.asat,
            Covariate::Weight => self.weight,
        }
    }
}

/// Possibly incomplete laboratory values recorded on one day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateRecord {
    pub alb: Option<f64>,
    pub asat: Option<f64>,
    pub weight: Option<f64>,
}

impl CovariateRecord {
    pub fn get(&self, cov: Covariate) -> Option<f64> {
        match cov {
            Covariate::Alb => self.alb,
            Covariate::Asat => self.asat,
            Covariate::Weight => self.weight,
            Covariate::Pod => None,
        }
    }

    pub fn set(&mut self, cov: Covariate, value: Option<f64>) {
        match cov {
            Covariate::Alb => self.alb = value,
            Covariate::Asat => self.asat = value,
            Covariate::Weight => self.weight = value,
            Covariate::Pod => {}
        }
    }

    /// Overlay the values present in `other`.
    pub fn merge(&mut self, other: &CovariateRecord) {
        for cov in LAB_COVARIATES {
            if let Some(v) = other.get(cov) {
                self.set(cov, Some(v));
            }
        }
    }

    pub fn is_complete(&self) -> bool {
        self.alb.is_some() && self.asat.is_some() && self.weight.is_some()
    }
}

/// Daily-recorded covariates (POD is implied by the day itself).
pub const LAB_COVARIATES: [Covariate; 3] = [Covariate::Alb, Covariate::Asat, Covariate::Weight];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// Oral dose in mg. Doses superpose in the absorption depot.
    Dose { time: f64, amount: f64 },
    /// Whole-blood concentration in ng/mL. `mdv = true` keeps the record for prediction only;
    /// `value` may then be absent.
    Observation { time: f64, value: Option<f64>, mdv: bool },
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::Dose { time, .. } | Event::Observation { time, .. } => *time,
        }
    }

    fn order_key(&self) -> u8 {
        match self {
            Event::Dose { .. } => 0,
            Event::Observation { .. } => 1,
        }
    }

    pub fn is_dose(&self) -> bool {
        matches!(self, Event::Dose { .. })
    }

    /// Observed concentration when the record enters estimation.
    pub fn observed(&self) -> Option<f64> {
        match self {
            Event::Observation {
                value: Some(v),
                mdv: false,
                ..
            } => Some(*v),
            _ => None,
        }
    }
}

/// One patient's dated events and daily covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTimeline {
    pub patient_id: String,
    events: Vec<Event>,
    covariates: BTreeMap<u32, CovariateRecord>,
    pod_offset: i64,
    #[serde(default)]
    pub transplant_date: Option<NaiveDate>,
}

impl EventTimeline {
    /// Builds a timeline, sorting events (doses before observations at equal times) and
    /// checking event invariants. Covariate completeness is ensured by `locf_fill`.
    pub fn new(
        patient_id: impl Into<String>,
        mut events: Vec<Event>,
        covariates: BTreeMap<u32, CovariateRecord>,
        pod_offset: i64,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        events.sort_by(|a, b| a.time().total_cmp(&b.time()).then(a.order_key().cmp(&b.order_key())));
        let tl = Self {
            patient_id,
            events,
            covariates,
            pod_offset,
            transplant_date: None,
        };
        tl.validate_events()?;
        Ok(tl)
    }

    pub fn with_transplant_date(mut self, date: Option<NaiveDate>) -> Self {
        self.transplant_date = date;
        self
    }

    fn validate_events(&self) -> Result<()> {
        let id = &self.patient_id;
        let mut last_obs_time = None;
        for ev in &self.events {
            let t = ev.time();
            if !t.is_finite() {
                return Err(Error::data(id, "event time is not finite"));
            }
            match ev {
                Event::Dose { amount, .. } => {
                    if !(*amount > 0.0) || !amount.is_finite() {
                        return Err(Error::data(id, format!("dose at t={t} must have amount > 0")));
                    }
                }
                Event::Observation { value, mdv, .. } => {
                    match (value, mdv) {
                        (Some(v), false) if !(*v > 0.0) || !v.is_finite() => {
                            return Err(Error::data(id, format!("observation at t={t} must be > 0")));
                        }
                        (None, false) => {
                            return Err(Error::data(id, format!("observation at t={t} has no value but MDV=0")));
                        }
                        (Some(v), true) if !v.is_finite() => {
                            return Err(Error::data(id, format!("observation at t={t} is not finite")));
                        }
                        _ => {}
                    }
                    if last_obs_time == Some(t) {
                        return Err(Error::data(id, format!("duplicate observation time t={t}")));
                    }
                    last_obs_time = Some(t);
                }
            }
            if self.pod_at(t) < 1 {
                return Err(Error::data(id, format!("event at t={t} falls before POD 1")));
            }
        }
        Ok(())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn covariates(&self) -> &BTreeMap<u32, CovariateRecord> {
        &self.covariates
    }

    pub fn covariates_mut(&mut self) -> &mut BTreeMap<u32, CovariateRecord> {
        &mut self.covariates
    }

    pub fn pod_offset(&self) -> i64 {
        self.pod_offset
    }

    /// Post-operative day of time `t` (hours).
    pub fn pod_at(&self, t: f64) -> i64 {
        (t / 24.0).floor() as i64 + self.pod_offset
    }

    /// Time (hours) of the midnight that starts `pod`.
    pub fn pod_start(&self, pod: i64) -> f64 {
        (pod - self.pod_offset) as f64 * 24.0
    }

    /// Inclusive POD range spanned by the events.
    pub fn pod_span(&self) -> Option<(u32, u32)> {
        let first = self.events.first()?;
        let last = self.events.last()?;
        Some((self.pod_at(first.time()) as u32, self.pod_at(last.time()) as u32))
    }

    pub fn covariates_at(&self, pod: u32) -> Result<CovariateState> {
        let rec = self.covariates.get(&pod).ok_or_else(|| {
            Error::data(
                &self.patient_id,
                format!("no covariate record for POD {pod} (run locf_fill)"),
            )
        })?;
        match (rec.alb, rec.asat, rec.weight) {
            (Some(alb), Some(asat), Some(weight)) => Ok(CovariateState { pod, alb, asat, weight }),
            _ => Err(Error::data(
                &self.patient_id,
                format!("incomplete covariate record for POD {pod} (run locf_fill)"),
            )),
        }
    }

    pub fn doses(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::Dose { time, amount } => Some((*time, *amount)),
            _ => None,
        })
    }

    /// Observation events (any MDV) in time order.
    pub fn observations(&self) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(|e| !e.is_dose())
    }

    /// `(time, value)` of every observation that enters estimation, in time order.
    pub fn observed(&self) -> Vec<(f64, f64)> {
        self.events
            .iter()
            .filter_map(|e| e.observed().map(|v| (e.time(), v)))
            .collect()
    }

    pub fn n_observed(&self) -> usize {
        self.events.iter().filter(|e| e.observed().is_some()).count()
    }

    /// Appends events, re-sorting and re-validating.
    pub fn add_events(&mut self, new_events: impl IntoIterator<Item = Event>) -> Result<()> {
        let mut events = self.events.clone();
        events.extend(new_events);
        let rebuilt = EventTimeline::new(
            self.patient_id.clone(),
            events,
            self.covariates.clone(),
            self.pod_offset,
        )?;
        self.events = rebuilt.events;
        Ok(())
    }

    /// Same timeline with every dose amount multiplied by `factor`.
    pub fn scale_doses(&self, factor: f64) -> EventTimeline {
        let mut out = self.clone();
        for ev in &mut out.events {
            if let Event::Dose { amount, .. } = ev {
                *amount *= factor;
            }
        }
        out
    }

    /// Same timeline with every observation masked (MDV=1).
    pub fn masked(&self) -> EventTimeline {
        let mut out = self.clone();
        for ev in &mut out.events {
            if let Event::Observation { mdv, .. } = ev {
                *mdv = true;
            }
        }
        out
    }

    /// Keeps only the first `n` estimation observations unmasked.
    pub fn masked_after(&self, n: usize) -> EventTimeline {
        let mut out = self.clone();
        let mut seen = 0;
        for ev in &mut out.events {
            if let Event::Observation {
                value: Some(_), mdv, ..
            } = ev
            {
                if !*mdv {
                    seen += 1;
                    if seen > n {
                        *mdv = true;
                    }
                }
            }
        }
        out
    }

    /// Carries the last covariate record forward through `pod`, for predictions beyond the
    /// observed span.
    pub fn extend_covariates_through(&mut self, pod: u32) {
        let Some((&last, rec)) = self.covariates.iter().next_back() else {
            return;
        };
        let rec = *rec;
        for d in last + 1..=pod {
            self.covariates.insert(d, rec);
        }
    }

    /// Replaces the whole covariate record.
    pub fn set_covariates(&mut self, covariates: BTreeMap<u32, CovariateRecord>) {
        self.covariates = covariates;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev_dose(t: f64) -> Event {
        Event::Dose { time: t, amount: 2.0 }
    }
    fn ev_obs(t: f64, v: f64) -> Event {
        Event::Observation {
            time: t,
            value: Some(v),
            mdv: false,
        }
    }

    #[test]
    fn ties_put_doses_first() {
        let tl = EventTimeline::new(
            "a",
            vec![ev_obs(12.0, 5.0), ev_dose(12.0), ev_dose(0.0)],
            BTreeMap::new(),
            1,
        )
        .unwrap();
        assert!(tl.events()[0].is_dose());
        assert!(tl.events()[1].is_dose());
        assert_eq!(tl.events()[1].time(), 12.0);
        assert!(!tl.events()[2].is_dose());
    }

    #[test]
    fn rejects_non_positive_observation() {
        let err = EventTimeline::new("a", vec![ev_obs(1.0, 0.0)], BTreeMap::new(), 1).unwrap_err();
        assert!(matches!(err, Error::Data { .. }));
        // Masked records may carry any finite value.
        let masked = Event::Observation {
            time: 1.0,
            value: Some(0.0),
            mdv: true,
        };
        assert!(EventTimeline::new("a", vec![masked], BTreeMap::new(), 1).is_ok());
    }

    #[test]
    fn pod_mapping() {
        let tl = EventTimeline::new("a", vec![ev_dose(7.25)], BTreeMap::new(), 2).unwrap();
        assert_eq!(tl.pod_at(0.0), 2);
        assert_eq!(tl.pod_at(23.99), 2);
        assert_eq!(tl.pod_at(24.0), 3);
        assert_eq!(tl.pod_start(3), 24.0);
        assert!(EventTimeline::new("a", vec![ev_dose(-30.0)], BTreeMap::new(), 1).is_err());
    }

    #[test]
    fn masking_keeps_first_n() {
        let tl = EventTimeline::new(
            "a",
            vec![ev_dose(0.0), ev_obs(10.0, 1.0), ev_obs(20.0, 2.0), ev_obs(30.0, 3.0)],
            BTreeMap::new(),
            1,
        )
        .unwrap();
        assert_eq!(tl.masked_after(1).observed(), vec![(10.0, 1.0)]);
        assert_eq!(tl.masked().n_observed(), 0);
        assert_eq!(tl.masked_after(10).n_observed(), 3);
    }
}
