//! Demographic and sampling summary of one or more cohorts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cohort::Cohort;
use crate::error::Result;
use crate::pk::{Covariate, LAB_COVARIATES};

/// Descriptive statistics of one variable; empty sets leave the moments unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub split: String,
    pub variable: String,
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n − 1); unset below two values.
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

fn stat(split: &str, variable: &str, values: &[f64]) -> SummaryStat {
    let n = values.len();
    let (mean, sd, min, max) = if n == 0 {
        (None, None, None, None)
    } else {
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (Some(mean), sd, Some(min), Some(max))
    };
    SummaryStat {
        split: split.to_string(),
        variable: variable.to_string(),
        n,
        mean,
        sd,
        min,
        max,
    }
}

fn count(split: &str, variable: &str, n: usize) -> SummaryStat {
    SummaryStat {
        split: split.to_string(),
        variable: variable.to_string(),
        n,
        mean: None,
        sd: None,
        min: None,
        max: None,
    }
}

/// Rows: `patients`, `observations`, `doses`, `obs_per_patient`, then the first recorded value
/// per patient of ALB, ASAT, WT and every extra numeric column.
pub fn summarize_cohort(cohort: &Cohort, split: &str) -> Vec<SummaryStat> {
    let obs_per: Vec<f64> = cohort.patients.iter().map(|p| p.n_observed() as f64).collect();
    let mut rows = vec![
        count(split, "patients", cohort.len()),
        count(split, "observations", cohort.n_observed()),
        count(split, "doses", cohort.patients.iter().map(|p| p.doses().count()).sum()),
        stat(split, "obs_per_patient", &obs_per),
    ];
    for cov in LAB_COVARIATES {
        let values: Vec<f64> = cohort
            .patients
            .iter()
            .filter_map(|p| p.covariates().values().find_map(|r| r.get(cov)))
            .collect();
        rows.push(stat(split, &baseline_name(cov), &values));
    }
    let extra: BTreeSet<&String> = cohort.attributes.values().flat_map(|a| a.keys()).collect();
    for name in extra {
        let values: Vec<f64> = cohort
            .patients
            .iter()
            .filter_map(|p| cohort.attributes.get(&p.patient_id).and_then(|a| a.get(name)).copied())
            .collect();
        rows.push(stat(split, name, &values));
    }
    rows
}

fn baseline_name(cov: Covariate) -> String {
    format!("baseline_{}", cov.column())
}

/// Concatenated summaries of several labelled cohorts as CSV.
pub fn summary_csv(parts: &[(&str, &Cohort)]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["split", "variable", "n", "mean", "sd", "min", "max"])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (label, cohort) in parts {
        for r in summarize_cohort(cohort, label) {
            w.write_record([
                r.split,
                r.variable,
                r.n.to_string(),
                fmt(r.mean),
                fmt(r.sd),
                fmt(r.min),
                fmt(r.max),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Rows indexed by `(split, variable)`.
pub fn index_summary(rows: &[SummaryStat]) -> BTreeMap<(String, String), SummaryStat> {
    rows.iter()
        .map(|r| ((r.split.clone(), r.variable.clone()), r.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::data::cohort::Provenance;
    use crate::pk::{Event, EventTimeline};

    #[test]
    fn single_patient() {
        let events = (0..4)
            .map(|i| Event::Observation {
                time: 24.0 * f64::from(i) + 6.0,
                value: Some(8.0),
                mdv: false,
            })
            .collect();
        let tl = EventTimeline::new("a", events, BTreeMap::new(), 1).unwrap();
        let c = Cohort::new(vec![tl], Provenance::default()).unwrap();
        let idx = index_summary(&summarize_cohort(&c, "all"));
        assert_eq!(idx[&("all".into(), "patients".into())].n, 1);
        let per = &idx[&("all".into(), "obs_per_patient".into())];
        assert_eq!((per.mean, per.min, per.max), (Some(4.0), Some(4.0), Some(4.0)));
        assert_eq!(per.sd, None);
    }

    #[test]
    fn empty_cohort() {
        let c = Cohort::default();
        let rows = summarize_cohort(&c, "x");
        assert!(rows.iter().all(|r| r.n == 0 && r.mean.is_none()));
        let csv = summary_csv(&[("x", &c)]).unwrap();
        assert!(csv.starts_with("split,variable,n,mean,sd,min,max\nx,patients,0,,,,\n"));
    }
}
