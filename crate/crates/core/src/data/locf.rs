//! Daily covariate imputation by last observation carried forward.

use super::cohort::Cohort;
use crate::error::{Error, Result};
use crate::pk::{CovariateRecord, EventTimeline, LAB_COVARIATES};

/// Fills every POD from the first to the last event (or covariate record) of each patient.
///
/// A day without a value takes the previous day's value. Days before the first measurement
/// take that first measurement, with a warning.
pub fn locf_fill(cohort: &Cohort) -> Result<Cohort> {
    let mut out = cohort.clone();
    for tl in &mut out.patients {
        let warnings = locf_fill_timeline(tl)?;
        out.provenance.warnings.extend(warnings);
    }
    Ok(out)
}

/// Fills one timeline in place, returning the back-fill warnings.
pub fn locf_fill_timeline(tl: &mut EventTimeline) -> Result<Vec<String>> {
    let recs = tl.covariates();
    let first = [tl.pod_span().map(|s| s.0), recs.keys().next().copied()]
        .into_iter()
        .flatten()
        .min();
    let last = [tl.pod_span().map(|s| s.1), recs.keys().next_back().copied()]
        .into_iter()
        .flatten()
        .max();
    let (Some(first), Some(last)) = (first, last) else {
        return Ok(Vec::new());
    };
    let mut filled = recs.clone();
    let mut warnings = Vec::new();
    for cov in LAB_COVARIATES {
        let Some((first_pod, first_val)) = recs.iter().find_map(|(pod, r)| r.get(cov).map(|v| (*pod, v))) else {
            return Err(Error::Config(format!(
                "covariate {} is never observed for patient {}",
                cov.column(),
                tl.patient_id
            )));
        };
        if first_pod > first {
            let msg = format!(
                "patient {}: {} back-filled from POD {first_pod} to POD {first}",
                tl.patient_id,
                cov.column()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let mut carry = first_val;
        for pod in first..=last {
            let rec = filled.entry(pod).or_insert_with(CovariateRecord::default);
            match rec.get(cov) {
                Some(v) => carry = v,
                None => rec.set(cov, Some(carry)),
            }
        }
    }
    tl.set_covariates(filled);
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::pk::{Covariate, Event};

    fn rec(alb: Option<f64>, asat: Option<f64>, wt: Option<f64>) -> CovariateRecord {
        CovariateRecord { alb, asat, weight: wt }
    }

    fn timeline(covs: BTreeMap<u32, CovariateRecord>, last_pod: u32) -> EventTimeline {
        let events = vec![
            Event::Dose { time: 1.0, amount: 2.0 },
            Event::Observation {
                time: f64::from(last_pod - 1) * 24.0 + 6.0,
                value: Some(8.0),
                mdv: false,
            },
        ];
        EventTimeline::new("p", events, covs, 1).unwrap()
    }

    #[test]
    fn carries_previous_day() {
        let mut covs = BTreeMap::new();
        covs.insert(4, rec(Some(30.0), Some(50.0), Some(70.0)));
        covs.insert(7, rec(Some(33.0), None, None));
        let mut tl = timeline(covs, 8);
        let w = locf_fill_timeline(&mut tl).unwrap();
        assert_eq!(w.len(), 3);
        let c = tl.covariates();
        for pod in 5..=6 {
            assert_eq!(c[&pod].get(Covariate::Alb), Some(30.0));
        }
        assert_eq!(c[&8].get(Covariate::Alb), Some(33.0));
        assert_eq!(c[&8].get(Covariate::Asat), Some(50.0));
        assert_eq!(c[&1].get(Covariate::Weight), Some(70.0));
        for pod in 1..=8 {
            assert!(tl.covariates_at(pod).is_ok());
        }
    }

    #[test]
    fn never_observed_is_config_error() {
        let mut covs = BTreeMap::new();
        covs.insert(1, rec(Some(30.0), None, Some(70.0)));
        let mut tl = timeline(covs, 2);
        let err = locf_fill_timeline(&mut tl).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("ASAT") && m.contains("patient p")));
    }

    #[test]
    fn complete_input_unchanged() {
        let mut covs = BTreeMap::new();
        for pod in 1..=3 {
            covs.insert(pod, rec(Some(30.0 + f64::from(pod)), Some(40.0), Some(70.0)));
        }
        let tl = timeline(covs, 3);
        let mut filled = tl.clone();
        assert!(locf_fill_timeline(&mut filled).unwrap().is_empty());
        assert_eq!(filled, tl);
    }
}
