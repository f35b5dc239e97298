//! Whole-patient estimation/prediction split ordered by transplant date.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::cohort::Cohort;
use crate::error::{Error, Result};

pub const DEFAULT_FRACTION: f64 = 0.70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// The first `⌈fraction · N⌉` patients by transplant date.
    Fraction(f64),
    /// The first `n` patients by transplant date.
    Count(usize),
    /// Exactly these patients go to estimation.
    Ids(Vec<String>),
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::Fraction(DEFAULT_FRACTION)
    }
}

/// Splits `cohort` into `(estimation, prediction)`.
///
/// Patients are ranked by transplant date (earliest first), ties and undated patients broken by
/// id; undated patients rank after dated ones. Each output keeps the input order.
pub fn split(cohort: &Cohort, rule: &SplitRule) -> Result<(Cohort, Cohort)> {
    let n = cohort.len();
    if n < 2 {
        return Err(Error::Domain(format!("split needs at least 2 patients, got {n}")));
    }
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        let (pa, pb) = (&cohort.patients[a], &cohort.patients[b]);
        let key = |p: &crate::pk::EventTimeline| (p.transplant_date.is_none(), p.transplant_date);
        key(pa).cmp(&key(pb)).then_with(|| pa.patient_id.cmp(&pb.patient_id))
    });
    let undated = cohort.patients.iter().filter(|p| p.transplant_date.is_none()).count();
    let mut warnings = Vec::new();
    if undated > 0 && !matches!(rule, SplitRule::Ids(_)) {
        warnings.push(format!(
            "{undated} patient(s) without transplant date ranked last by id"
        ));
    }

    let chosen: BTreeSet<usize> = match rule {
        SplitRule::Fraction(f) => {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(Error::Config(format!("split fraction must be in (0, 1], got {f}")));
            }
            // Guard against 0.7·10 = 7.000000000000001 rounding up.
            let k = ((f * n as f64) - 1e-9).ceil().max(1.0) as usize;
            ranked[..k.min(n)].iter().copied().collect()
        }
        SplitRule::Count(k) => {
            if *k == 0 || *k > n {
                return Err(Error::Config(format!("split count must be in 1..={n}, got {k}")));
            }
            ranked[..*k].iter().copied().collect()
        }
        SplitRule::Ids(ids) => {
            let mut set = BTreeSet::new();
            for id in ids {
                let i = cohort
                    .patients
                    .iter()
                    .position(|p| &p.patient_id == id)
                    .ok_or_else(|| Error::Config(format!("split id list names unknown patient {id}")))?;
                set.insert(i);
            }
            set
        }
    };
    if chosen.len() == n {
        warnings.push("prediction cohort is empty".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let (mut est, mut pred) = (Vec::new(), Vec::new());
    for (i, p) in cohort.patients.iter().enumerate() {
        if chosen.contains(&i) {
            est.push(p.clone());
        } else {
            pred.push(p.clone());
        }
    }
    let mut est = cohort.derive(est, "split:estimation");
    let pred = cohort.derive(pred, "split:prediction");
    est.provenance.warnings = warnings;
    Ok((est, pred))
}


#[cfg(test)]
mod props {
    use std::collections::{BTreeMap, BTreeSet};

    use chrono::NaiveDate;
    use proptest::prelude::*;

    use super::*;
    use crate::data::Provenance;
    use crate::pk::{Event, EventTimeline};

    proptest! {
        #[test]
        fn partition_and_determinism(
            days in prop::collection::vec(prop::option::weighted(0.8, 0u64..400), 2..40),
            fraction in 0.05..1.0f64,
        ) {
            let patients: Vec<EventTimeline> = days
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let date = d.map(|d| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(d));
                    EventTimeline::new(format!("p{i:03}"), vec![Event::Dose { time: 1.0, amount: 1.0 }], BTreeMap::new(), 1)
                        .unwrap()
                        .with_transplant_date(date)
                })
                .collect();
            let cohort = Cohort::new(patients, Provenance::default()).unwrap();
            let rule = SplitRule::Fraction(fraction);
            let (e, p) = split(&cohort, &rule).unwrap();
            let (e2, p2) = split(&cohort, &rule).unwrap();
            prop_assert_eq!(&e.patients, &e2.patients);
            prop_assert_eq!(&p.patients, &p2.patients);
            let est: BTreeSet<&str> = e.ids().into_iter().collect();
            let pred: BTreeSet<&str> = p.ids().into_iter().collect();
            prop_assert!(est.is_disjoint(&pred));
            let all: BTreeSet<&str> = cohort.ids().into_iter().collect();
            prop_assert_eq!(est.union(&pred).copied().collect::<BTreeSet<_>>(), all);
            // Nobody in the prediction set was transplanted strictly before someone in the estimation set.
            let key = |t: &EventTimeline| t.transplant_date.map_or((1, NaiveDate::MAX), |d| (0, d));
            let latest = e.patients.iter().map(key).max().unwrap();
            prop_assert!(p.patients.iter().all(|t| key(t) >= latest));
        }
    }
}
